use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::time::Instant;

use serde::Serialize;
use serde_json::json;
use sgdm_core::dataset::write_libsvm;
use sgdm_core::harness::{
    prepare_data, reference_minimizer, run_bound_check, run_optimization_check,
    run_stability_experiment, write_stability_outputs, BoundCheckConfig, BoundCheckResult,
    DataSource, ExperimentConfig, OptCheckResult,
};
use sgdm_core::losses::{empirical_risk, smoothness};
use sgdm_core::optimizer::variant_params;
use sgdm_core::suite::{run_suite, Fault, SuiteConfig};
use sgdm_core::theory::{epr_recipe, max_eta_hb, max_gamma_nesterov, stability_condition};
use sgdm_core::{LossKind, Variant};

use crate::config::Config;

// A closed pipe (`sgdm ... | head`) is not an error worth a panic.
macro_rules! say {
    ($($arg:tt)*) => {{
        use std::io::Write;
        let _ = writeln!(std::io::stdout(), $($arg)*);
    }};
}
use crate::error::CliError;

fn write_json(dir: &Path, name: &str, value: &impl Serialize) -> Result<(), CliError> {
    fs::create_dir_all(dir)
        .map_err(|e| CliError::Config(format!("cannot create {}: {e}", dir.display())))?;
    let path = dir.join(name);
    fs::write(&path, serde_json::to_string_pretty(value)?)
        .map_err(|e| CliError::Config(format!("cannot write {}: {e}", path.display())))
}

fn loss(cfg: &Config) -> Result<LossKind, CliError> {
    cfg.get_or("loss", LossKind::Logistic)
}

fn variant(cfg: &Config) -> Result<Variant, CliError> {
    cfg.get_or("variant", Variant::Hb)
}

pub fn parse_data(cfg: &Config) -> Result<(), CliError> {
    let source = cfg.data_source()?;
    let raw = match &source {
        DataSource::Libsvm { path, dim } => sgdm_core::dataset::read_libsvm_file(path, *dim)?,
        other => other.load()?,
    };
    let mut classes: BTreeMap<String, usize> = BTreeMap::new();
    for y in raw.labels() {
        *classes.entry(format!("{y:?}")).or_default() += 1;
    }
    let binary = raw.clone().binarize()?;
    let nnz: usize = raw.examples().iter().map(|e| e.features.nnz()).sum();
    let summary = json!({
        "source": source,
        "n": raw.n(),
        "dim": raw.dim(),
        "nnz": nnz,
        "label_counts": classes,
        "positive_after_binarize": binary.labels().iter().filter(|&&y| y > 0.0).count(),
        "alpha": {
            "logistic": smoothness(&binary, LossKind::Logistic).alpha,
            "squared": smoothness(&binary, LossKind::Squared).alpha,
        },
    });
    let dir = cfg.outdir();
    write_json(&dir, "summary.json", &summary)?;
    let path = dir.join("dataset.libsvm");
    let file = fs::File::create(&path)
        .map_err(|e| CliError::Config(format!("cannot write {}: {e}", path.display())))?;
    write_libsvm(&raw, std::io::BufWriter::new(file))?;
    say!("{}", serde_json::to_string_pretty(&summary)?);
    Ok(())
}

fn experiment_config(cfg: &Config) -> Result<ExperimentConfig, CliError> {
    Ok(ExperimentConfig {
        data: cfg.data_source()?,
        max_examples: cfg.get("max_examples")?,
        loss: loss(cfg)?,
        variant: variant(cfg)?,
        steps: cfg
            .list("steps")?
            .ok_or_else(|| CliError::Config("missing key `steps`".into()))?,
        betas: cfg
            .list("betas")?
            .ok_or_else(|| CliError::Config("missing key `betas`".into()))?,
        gamma: cfg.get_or("gamma", 0.0)?,
        repetitions: cfg.get_or("reps", 20)?,
        epochs: cfg.get_or("epochs", 5)?,
        train_fraction: cfg.get_or("fraction", 0.8)?,
        seed: cfg.get_or("seed", 0)?,
        stride: cfg.get("stride")?,
        output_dir: Some(cfg.outdir()),
    })
}

pub fn run_stability(cfg: &Config) -> Result<(), CliError> {
    let exp = experiment_config(cfg)?;
    exp.validate()?;
    let start = Instant::now();
    let result = run_stability_experiment(&exp)?;
    let elapsed = start.elapsed().as_secs_f64();
    let mut extra = serde_json::Map::new();
    extra.insert("config".into(), cfg.echo());
    extra.insert("experiment".into(), serde_json::to_value(&exp)?);
    extra.insert("wall_clock_seconds".into(), json!(elapsed));
    let dir = cfg.outdir();
    let paths = write_stability_outputs(&result, &dir, extra)?;
    for (p, path) in result.points.iter().zip(&paths) {
        say!(
            "beta={:?} step={:?} final_mean={:?} final_std={:?} censored={} -> {}",
            p.beta,
            p.step,
            p.final_mean(),
            p.final_std(),
            p.censored,
            path.display()
        );
    }
    Ok(())
}

#[derive(Serialize)]
struct BoundPoint {
    beta: f64,
    step: f64,
    stability: BoundCheckResult,
    optimization: OptCheckResult,
}

pub fn check_bounds(cfg: &Config) -> Result<(), CliError> {
    let loss = loss(cfg)?;
    let variant = variant(cfg)?;
    let seed: u64 = cfg.get_or("seed", 0)?;
    let data = prepare_data(
        &cfg.data_source()?,
        cfg.get("max_examples")?,
        cfg.get_or("fraction", 0.8)?,
        loss,
        seed,
    )?;
    let n = data.train.n();
    let betas: Vec<f64> = cfg
        .list("betas")?
        .ok_or_else(|| CliError::Config("missing key `betas`".into()))?;
    let gamma: f64 = cfg.get_or("gamma", 0.0)?;
    let t = cfg.get_or("bound_epochs", 5usize)? * n;
    let samples = cfg.get_or("bound_samples", 50usize)?;
    let opt_ts: Vec<usize> = cfg
        .list::<usize>("opt_epochs")?
        .unwrap_or_else(|| vec![1, 5])
        .into_iter()
        .map(|e| e * n)
        .collect();
    let opt_seeds = cfg.get_or("opt_seeds", 20usize)?;
    let ref_iterations = cfg.get_or("ref_iterations", 10_000usize)?;

    let mut grid = Vec::new();
    for &beta in &betas {
        let steps = match (cfg.list::<f64>("steps")?, cfg.get::<f64>("step_fraction")?) {
            (Some(steps), None) => steps,
            (None, Some(f)) => {
                let cap = match variant {
                    Variant::Hb => max_eta_hb(beta, data.alpha)?,
                    Variant::Nesterov => max_gamma_nesterov(beta, data.alpha)?,
                    Variant::General => {
                        return Err(CliError::Config(
                            "step_fraction needs variant hb or nesterov".into(),
                        ))
                    }
                };
                vec![f * cap]
            }
            _ => return Err(CliError::Config("set exactly one of `steps` and `step_fraction`".into())),
        };
        for step in steps {
            grid.push((beta, step, variant_params(variant, step, beta, gamma, t)?));
        }
    }
    // refuse before doing any work if a grid point breaks the stability condition
    for (_, _, hp) in &grid {
        let c = stability_condition(hp, data.alpha, variant);
        if !c.satisfied {
            return Err(sgdm_core::Error::PreconditionRefused(format!(
                "beta={} gamma={} eta={}: {:?} lhs {} > rhs {}",
                hp.beta, hp.gamma, hp.eta, c.which, c.lhs, c.rhs
            ))
            .into());
        }
    }

    let start = Instant::now();
    let w_ref = reference_minimizer(&data.train, loss, ref_iterations)?;
    let mut points = Vec::new();
    for (beta, step, hp) in grid {
        let stability = run_bound_check(
            &data.train,
            &data.held,
            &BoundCheckConfig { loss, variant, hp, t, samples, seed },
        )?;
        let optimization =
            run_optimization_check(&data.train, loss, variant, &hp, &opt_ts, opt_seeds, seed, &w_ref)?;
        say!(
            "beta={beta:?} step={step:?} stability empirical={:?} bound={:?} holds={} | optimization holds={}",
            stability.empirical,
            stability.theoretical.value,
            stability.holds,
            optimization.points.iter().all(|p| p.holds)
        );
        points.push(BoundPoint { beta, step, stability, optimization });
    }
    let failed = points
        .iter()
        .filter(|p| !p.stability.holds || p.optimization.points.iter().any(|o| !o.holds))
        .count();
    let report = json!({
        "config": cfg.echo(),
        "alpha": data.alpha,
        "n_train": n,
        "t": t,
        "points": points,
        "wall_clock_seconds": start.elapsed().as_secs_f64(),
    });
    write_json(&cfg.outdir(), "bounds.json", &report)?;
    if failed > 0 {
        return Err(CliError::CheckFailed(format!("{failed} grid point(s) exceeded a bound")));
    }
    Ok(())
}

pub fn verify_invariants(cfg: &Config) -> Result<(), CliError> {
    let defaults = SuiteConfig::default();
    let data = if cfg.raw("dataset").is_some() {
        cfg.data_source()?
    } else {
        defaults.data.clone()
    };
    let fault = match cfg.raw("inject_fault") {
        None | Some("none") => None,
        Some("wrong_effective_step") => Some(Fault::WrongEffectiveStep),
        Some(other) => return Err(CliError::Config(format!("unknown fault `{other}`"))),
    };
    let suite = SuiteConfig {
        data,
        losses: cfg.list("loss")?.unwrap_or(defaults.losses),
        betas: cfg.list("betas")?.unwrap_or(defaults.betas),
        step_fraction: cfg.get_or("step_fraction", defaults.step_fraction)?,
        identity_steps: cfg.get_or("identity_steps", defaults.identity_steps)?,
        recursion_steps: cfg.get_or("recursion_steps", defaults.recursion_steps)?,
        probes: cfg.get_or("probes", defaults.probes)?,
        frequency_draws: defaults.frequency_draws,
        seed: cfg.get_or("seed", defaults.seed)?,
        fault,
    };
    let report = run_suite(&suite)?;
    let out = json!({ "config": cfg.echo(), "suite": suite, "report": report });
    write_json(&cfg.outdir(), "invariants.json", &out)?;
    say!("{}", serde_json::to_string_pretty(&report)?);
    let failed: Vec<String> = report
        .failures()
        .map(|c| {
            let loss = c.loss.map_or("-".into(), |l| l.to_string());
            let beta = c.beta.map_or("-".into(), |b| format!("{b:?}"));
            let variant = c.variant.map_or("-".into(), |v| v.to_string());
            format!("{}[{loss},{beta},{variant}]", c.name)
        })
        .collect();
    if !failed.is_empty() {
        return Err(CliError::CheckFailed(format!("failed checks: {}", failed.join(" "))));
    }
    Ok(())
}

pub fn recipe(cfg: &Config) -> Result<(), CliError> {
    let variant = variant(cfg)?;
    let betas: Vec<f64> = cfg.list("betas")?.unwrap_or_else(|| vec![0.0]);
    let (n, alpha, l_star, source) = if cfg.raw("dataset").is_some() {
        let loss = loss(cfg)?;
        let data = prepare_data(
            &cfg.data_source()?,
            cfg.get("max_examples")?,
            cfg.get_or("fraction", 0.8)?,
            loss,
            cfg.get_or("seed", 0)?,
        )?;
        let l_star = match cfg.get::<f64>("l_star")? {
            Some(v) => v,
            None => {
                let w = reference_minimizer(&data.train, loss, cfg.get_or("ref_iterations", 10_000)?)?;
                empirical_risk(&w, &data.held, loss)?
            }
        };
        let alpha = cfg.get::<f64>("alpha")?.unwrap_or(data.alpha);
        (data.train.n(), Some(alpha), l_star, "held-out risk of a full-gradient reference run")
    } else {
        (cfg.require("n")?, cfg.get("alpha")?, cfg.require("l_star")?, "supplied")
    };
    let recipes = betas
        .iter()
        .map(|&b| epr_recipe(n, b, l_star, variant, alpha))
        .collect::<Result<Vec<_>, _>>()?;
    let out = json!({
        "config": cfg.echo(),
        "n": n,
        "alpha": alpha,
        "l_star_source": source,
        "recipes": recipes,
    });
    write_json(&cfg.outdir(), "recipe.json", &out)?;
    say!("{}", serde_json::to_string_pretty(&out)?);
    Ok(())
}
