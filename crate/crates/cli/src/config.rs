//! Flat `key = value` configuration files.
//!
//! Blank lines and lines starting with `#` are ignored. Lists are
//! comma-separated. Overrides given on the command line replace file values
//! after parsing.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use sgdm_core::harness::DataSource;

use crate::error::CliError;

/// Environment variable that supplies the output directory when the
/// configuration does not set `outdir`.
pub const OUTDIR_ENV: &str = "SGDM_OUTDIR";

pub const KEYS: &[(&str, &str)] = &[
    ("dataset", "LIBSVM file, or synthetic:gaussian:NxD, synthetic:mushrooms, synthetic:a9a:N"),
    ("dim", "feature dimension override for LIBSVM files"),
    ("max_examples", "subsample the data to at most this many examples"),
    ("loss", "logistic | squared"),
    ("variant", "hb | nesterov | general"),
    ("betas", "momentum grid"),
    ("steps", "step grid (eta for hb/general, gamma for nesterov)"),
    ("gamma", "fixed gamma for the general variant"),
    ("reps", "repetitions per grid point"),
    ("epochs", "epochs per run"),
    ("fraction", "train fraction"),
    ("seed", "master seed"),
    ("stride", "iterations between recorded distances (default: one epoch)"),
    ("outdir", "output directory"),
    ("step_fraction", "steps as a fraction of the admissible maximum"),
    ("bound_epochs", "bound-check horizon t in epochs"),
    ("bound_samples", "bound-check Monte-Carlo samples"),
    ("opt_epochs", "optimization-check horizons in epochs"),
    ("opt_seeds", "optimization-check algorithm seeds"),
    ("ref_iterations", "full-gradient iterations for the reference point"),
    ("identity_steps", "trajectory length for identity checks"),
    ("recursion_steps", "trajectory length for the momentum recursion check"),
    ("probes", "random probes per loss for the lemma checks"),
    ("inject_fault", "none | wrong_effective_step"),
    ("n", "sample size for recipe"),
    ("l_star", "estimate of the minimal population risk for recipe"),
    ("alpha", "smoothness constant for recipe clamping"),
];

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Config {
    values: BTreeMap<String, String>,
    overrides: Vec<(String, String)>,
    base_dir: PathBuf,
}

fn check_key(key: &str) -> Result<(), CliError> {
    if KEYS.iter().any(|(k, _)| *k == key) {
        Ok(())
    } else {
        Err(CliError::Config(format!("unknown key `{key}`")))
    }
}

fn split_pair(text: &str) -> Option<(String, String)> {
    let (k, v) = text.split_once('=')?;
    Some((k.trim().to_string(), v.trim().to_string()))
}

impl Config {
    pub fn parse(text: &str, base_dir: &Path) -> Result<Self, CliError> {
        let mut values = BTreeMap::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = split_pair(line).ok_or_else(|| {
                CliError::Config(format!("line {}: expected key = value", lineno + 1))
            })?;
            check_key(&key)?;
            if values.insert(key.clone(), value).is_some() {
                return Err(CliError::Config(format!("line {}: duplicate key `{key}`", lineno + 1)));
            }
        }
        Ok(Self {
            values,
            overrides: Vec::new(),
            base_dir: base_dir.to_path_buf(),
        })
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base)
    }

    pub fn apply_overrides(&mut self, overrides: &[String]) -> Result<(), CliError> {
        for o in overrides {
            let (k, v) = split_pair(o)
                .ok_or_else(|| CliError::Usage(format!("override `{o}` is not key=value")))?;
            check_key(&k)?;
            self.values.insert(k.clone(), v.clone());
            self.overrides.push((k, v));
        }
        Ok(())
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>, CliError>
    where
        T::Err: std::fmt::Display,
    {
        self.raw(key)
            .map(|v| {
                v.parse()
                    .map_err(|e| CliError::Config(format!("key `{key}`: cannot parse `{v}`: {e}")))
            })
            .transpose()
    }

    pub fn get_or<T: FromStr>(&self, key: &str, default: T) -> Result<T, CliError>
    where
        T::Err: std::fmt::Display,
    {
        Ok(self.get(key)?.unwrap_or(default))
    }

    pub fn require<T: FromStr>(&self, key: &str) -> Result<T, CliError>
    where
        T::Err: std::fmt::Display,
    {
        self.get(key)?
            .ok_or_else(|| CliError::Config(format!("missing key `{key}`")))
    }

    pub fn list<T: FromStr>(&self, key: &str) -> Result<Option<Vec<T>>, CliError>
    where
        T::Err: std::fmt::Display,
    {
        let Some(raw) = self.raw(key) else {
            return Ok(None);
        };
        raw.split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| {
                s.parse()
                    .map_err(|e| CliError::Config(format!("key `{key}`: cannot parse `{s}`: {e}")))
            })
            .collect::<Result<Vec<T>, _>>()
            .map(Some)
    }

    pub fn outdir(&self) -> PathBuf {
        match self.raw("outdir") {
            Some(v) => self.resolve(v),
            None => std::env::var_os(OUTDIR_ENV)
                .map(PathBuf::from)
                .unwrap_or_else(|| PathBuf::from("sgdm-out")),
        }
    }

    fn resolve(&self, v: &str) -> PathBuf {
        let p = PathBuf::from(v);
        if p.is_absolute() {
            p
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn data_source(&self) -> Result<DataSource, CliError> {
        let raw = self
            .raw("dataset")
            .ok_or_else(|| CliError::Config("missing key `dataset`".into()))?;
        let seed = self.get_or("seed", 0u64)?;
        let Some(spec) = raw.strip_prefix("synthetic:") else {
            return Ok(DataSource::Libsvm {
                path: self.resolve(raw),
                dim: self.get("dim")?,
            });
        };
        let bad = || CliError::Config(format!("unrecognized synthetic dataset `{raw}`"));
        let mut parts = spec.split(':');
        match (parts.next(), parts.next(), parts.next()) {
            (Some("mushrooms"), None, _) => Ok(DataSource::MushroomsLike { seed }),
            (Some("a9a"), Some(n), None) => Ok(DataSource::A9aLike {
                n: n.parse().map_err(|_| bad())?,
                seed,
            }),
            (Some("gaussian"), Some(shape), None) => {
                let (n, d) = shape.split_once('x').ok_or_else(bad)?;
                Ok(DataSource::Gaussian {
                    n: n.parse().map_err(|_| bad())?,
                    d: d.parse().map_err(|_| bad())?,
                    seed,
                })
            }
            _ => Err(bad()),
        }
    }

    /// All effective values, for echoing into manifests.
    pub fn echo(&self) -> serde_json::Value {
        serde_json::json!({
            "values": self.values,
            "overrides": self
                .overrides
                .iter()
                .map(|(k, v)| format!("{k}={v}"))
                .collect::<Vec<_>>(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_overrides() {
        let mut c = Config::parse(
            "# comment\ndataset = data/a.txt\nbetas = 0, 0.5,0.9\n\nreps=3\n",
            Path::new("/base"),
        )
        .unwrap();
        assert_eq!(c.list::<f64>("betas").unwrap().unwrap(), vec![0.0, 0.5, 0.9]);
        assert_eq!(c.get::<usize>("reps").unwrap(), Some(3));
        c.apply_overrides(&["reps=7".into()]).unwrap();
        assert_eq!(c.require::<usize>("reps").unwrap(), 7);
        assert_eq!(c.echo()["overrides"][0], "reps=7");
        assert_eq!(
            c.data_source().unwrap(),
            DataSource::Libsvm { path: "/base/data/a.txt".into(), dim: None }
        );
    }

    #[test]
    fn rejects_bad_input() {
        assert!(Config::parse("nonsense", Path::new(".")).is_err());
        assert!(Config::parse("colour = red", Path::new(".")).is_err());
        assert!(Config::parse("reps = 1\nreps = 2", Path::new(".")).is_err());
        let c = Config::parse("reps = x", Path::new(".")).unwrap();
        assert!(c.get::<usize>("reps").is_err());
    }

    #[test]
    fn synthetic_sources() {
        let c = Config::parse("dataset = synthetic:gaussian:200x10\nseed = 4", Path::new(".")).unwrap();
        assert_eq!(c.data_source().unwrap(), DataSource::Gaussian { n: 200, d: 10, seed: 4 });
        let c = Config::parse("dataset = synthetic:mushrooms", Path::new(".")).unwrap();
        assert_eq!(c.data_source().unwrap(), DataSource::MushroomsLike { seed: 0 });
        let c = Config::parse("dataset = synthetic:cubes", Path::new(".")).unwrap();
        assert!(c.data_source().is_err());
    }
}
