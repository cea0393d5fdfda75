//! Coupled-trajectory stability sweeps and Monte-Carlo checks of the
//! stability and optimization bounds.
//!
//! Every work unit (grid point × repetition, or bound-check sample) draws its
//! randomness from `seed + unit index`, and results are reduced in index
//! order, so outputs do not depend on how rayon schedules the work.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::dataset::{read_libsvm_file, split, Dataset, NeighborSpec};
use crate::error::{Error, Result, RunSide};
use crate::export::fmt_f64;
use crate::losses::{empirical_gradient, empirical_risk, smoothness, LossKind, WeightVector};
use crate::optimizer::{
    average_iterate, coupled_divergence, run, variant_params, HyperParams, RiskRecording,
    SampleStream, Variant,
};
use crate::synthetic;
use crate::theory::{
    check_opt_condition, check_stab_condition, optimization_bound, stability_bound,
    stability_condition, BoundReport, ConditionReport,
};

/// Where the examples come from.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DataSource {
    Libsvm { path: PathBuf, dim: Option<usize> },
    /// Dense Gaussian features with logistic labels.
    Gaussian { n: usize, d: usize, seed: u64 },
    /// One-hot data with the mushrooms layout.
    MushroomsLike { seed: u64 },
    /// One-hot data with the a9a layout.
    A9aLike { n: usize, seed: u64 },
}

impl DataSource {
    /// Loads and binarizes labels (already-±1 data is left as is).
    pub fn load(&self) -> Result<Dataset> {
        let raw = match self {
            DataSource::Libsvm { path, dim } => read_libsvm_file(path, *dim)?,
            DataSource::Gaussian { n, d, seed } => synthetic::gaussian_logistic(*n, *d, *seed)?,
            DataSource::MushroomsLike { seed } => synthetic::mushrooms_like(*seed)?,
            DataSource::A9aLike { n, seed } => synthetic::a9a_like(*n, *seed)?,
        };
        raw.binarize()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub data: DataSource,
    /// Subsample the loaded data to at most this many examples.
    pub max_examples: Option<usize>,
    pub loss: LossKind,
    pub variant: Variant,
    /// `η` for hb/general, `γ` for nesterov.
    pub steps: Vec<f64>,
    pub betas: Vec<f64>,
    /// Fixed `γ` for the general variant.
    pub gamma: f64,
    pub repetitions: usize,
    pub epochs: usize,
    pub train_fraction: f64,
    pub seed: u64,
    /// Iterations between recorded distances; `None` means once per epoch.
    pub stride: Option<usize>,
    pub output_dir: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps.is_empty() || self.betas.is_empty() {
            return Err(Error::InvalidArgument("step and beta grids must be nonempty".into()));
        }
        if self.repetitions == 0 || self.epochs == 0 {
            return Err(Error::InvalidArgument("repetitions and epochs must be positive".into()));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "train fraction {} not in (0, 1)",
                self.train_fraction
            )));
        }
        if self.stride == Some(0) {
            return Err(Error::InvalidArgument("stride must be positive".into()));
        }
        Ok(())
    }
}

/// Train/held-out split of the configured data.
#[derive(Clone, Debug)]
pub struct PreparedData {
    pub train: Dataset,
    pub held: Dataset,
    pub alpha: f64,
}

pub fn prepare_data(
    source: &DataSource,
    max_examples: Option<usize>,
    fraction: f64,
    loss: LossKind,
    seed: u64,
) -> Result<PreparedData> {
    let mut data = source.load()?;
    if let Some(max) = max_examples {
        data = data.subsample(max, seed)?;
    }
    let (train, held) = split(&data, fraction, seed)?;
    let alpha = smoothness(&train, loss).alpha;
    Ok(PreparedData { train, held, alpha })
}

/// Perturbed position drawn uniformly from the training set, replacement
/// drawn uniformly from the held-out set.
pub fn draw_neighbor(train: &Dataset, held: &Dataset, seed: u64) -> NeighborSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    let index = rng.random_range(1..=train.n());
    let replacement = held.example(rng.random_range(1..=held.n())).clone();
    NeighborSpec { index, replacement }
}

/// Pointwise sample mean and standard deviation (divisor `n − 1`, zero for a
/// single series).
pub fn aggregate(series: &[Vec<f64>]) -> Result<(Vec<f64>, Vec<f64>)> {
    let first = series
        .first()
        .ok_or_else(|| Error::InvalidArgument("aggregate needs at least one series".into()))?;
    let len = first.len();
    if series.iter().any(|s| s.len() != len) {
        return Err(Error::InvalidArgument("series have unequal lengths".into()));
    }
    let count = series.len() as f64;
    let means: Vec<f64> = (0..len)
        .map(|j| series.iter().map(|s| s[j]).sum::<f64>() / count)
        .collect();
    let stds = (0..len)
        .map(|j| {
            if series.len() < 2 {
                return 0.0;
            }
            let ss: f64 = series.iter().map(|s| (s[j] - means[j]).powi(2)).sum();
            (ss / (count - 1.0)).sqrt()
        })
        .collect();
    Ok((means, stds))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GridPointResult {
    pub beta: f64,
    pub step: f64,
    pub hp: HyperParams,
    pub conditions: Vec<ConditionReport>,
    /// `t/n` for each recorded point.
    pub epochs: Vec<f64>,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    /// Repetitions excluded from the aggregates because a run diverged.
    pub censored: usize,
    pub completed: usize,
}

impl GridPointResult {
    pub fn final_mean(&self) -> f64 {
        self.mean.last().copied().unwrap_or(f64::NAN)
    }

    pub fn final_std(&self) -> f64 {
        self.std.last().copied().unwrap_or(f64::NAN)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExperimentMetadata {
    pub n_train: usize,
    pub n_held: usize,
    pub dim: usize,
    pub alpha: f64,
    pub iterations: usize,
    pub stride: usize,
    pub perturbation: &'static str,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StabilityResult {
    pub variant: Variant,
    pub points: Vec<GridPointResult>,
    pub metadata: ExperimentMetadata,
}

const PERTURBATION: &str =
    "index uniform over the training split, replacement uniform over the held-out split, redrawn per repetition";

/// Runs the configured grid with coupled runs and aggregates `d_t`.
pub fn run_stability_experiment(cfg: &ExperimentConfig) -> Result<StabilityResult> {
    cfg.validate()?;
    let data = prepare_data(&cfg.data, cfg.max_examples, cfg.train_fraction, cfg.loss, cfg.seed)?;
    run_stability_on(cfg, &data)
}

/// As [`run_stability_experiment`] on already prepared data.
pub fn run_stability_on(cfg: &ExperimentConfig, data: &PreparedData) -> Result<StabilityResult> {
    cfg.validate()?;
    let n = data.train.n();
    let iterations = cfg.epochs * n;
    let stride = cfg.stride.unwrap_or(n);
    let points_len = iterations / stride;
    let epochs: Vec<f64> = (1..=points_len)
        .map(|j| (j * stride) as f64 / n as f64)
        .collect();

    let mut grid = Vec::new();
    for &beta in &cfg.betas {
        for &step in &cfg.steps {
            grid.push((beta, step, variant_params(cfg.variant, step, beta, cfg.gamma, iterations)?));
        }
    }

    let neighbors: Vec<NeighborSpec> = (0..cfg.repetitions)
        .map(|r| draw_neighbor(&data.train, &data.held, cfg.seed.wrapping_add(r as u64)))
        .collect();

    let w1 = WeightVector::zeros(data.train.dim());
    let units: Vec<(usize, usize)> = (0..grid.len())
        .flat_map(|g| (0..cfg.repetitions).map(move |r| (g, r)))
        .collect();
    let outcomes: Vec<Result<Option<Vec<f64>>>> = units
        .par_iter()
        .map(|&(g, r)| {
            let hp = &grid[g].2;
            let stream = SampleStream::new(cfg.seed.wrapping_add(r as u64), n)?;
            match coupled_divergence(
                &data.train,
                &neighbors[r],
                cfg.loss,
                hp,
                w1.clone(),
                &stream,
                stride,
                false,
            ) {
                Ok(summary) => Ok(Some(summary.distances)),
                Err(Error::CoupledDivergence { .. }) => Ok(None),
                Err(e) => Err(e),
            }
        })
        .collect();

    let mut per_point: Vec<Vec<Option<Vec<f64>>>> = vec![Vec::new(); grid.len()];
    for (&(g, _), outcome) in units.iter().zip(outcomes) {
        per_point[g].push(outcome?);
    }

    let points = grid
        .iter()
        .zip(per_point)
        .map(|(&(beta, step, hp), reps)| {
            let kept: Vec<Vec<f64>> = reps.iter().flatten().cloned().collect();
            let censored = reps.len() - kept.len();
            let (mean, std) = if kept.is_empty() {
                (vec![f64::NAN; points_len], vec![f64::NAN; points_len])
            } else {
                aggregate(&kept)?
            };
            let mut conditions = vec![
                check_stab_condition(&hp, data.alpha),
                check_opt_condition(&hp, data.alpha),
            ];
            if cfg.variant != Variant::General {
                conditions.push(stability_condition(&hp, data.alpha, cfg.variant));
            }
            Ok(GridPointResult {
                beta,
                step,
                hp,
                conditions,
                epochs: epochs.clone(),
                mean,
                std,
                censored,
                completed: kept.len(),
            })
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(StabilityResult {
        variant: cfg.variant,
        points,
        metadata: ExperimentMetadata {
            n_train: n,
            n_held: data.held.n(),
            dim: data.train.dim(),
            alpha: data.alpha,
            iterations,
            stride,
            perturbation: PERTURBATION,
        },
    })
}

/// File stem for a grid point's CSV, e.g. `hb_beta0.9_step0.025`.
pub fn grid_point_stem(variant: Variant, point: &GridPointResult) -> String {
    format!("{variant}_beta{:?}_step{:?}", point.beta, point.step)
}

/// Columns `epoch,mean_dist,std_dist,censored_count`.
pub fn write_grid_point_csv<W: std::io::Write>(point: &GridPointResult, mut out: W) -> Result<()> {
    writeln!(out, "epoch,mean_dist,std_dist,censored_count")?;
    for j in 0..point.epochs.len() {
        writeln!(
            out,
            "{},{},{},{}",
            fmt_f64(Some(point.epochs[j])),
            fmt_f64(Some(point.mean[j])),
            fmt_f64(Some(point.std[j])),
            point.censored
        )?;
    }
    Ok(())
}

/// Writes one CSV per grid point and `manifest.json` into `dir`; `extra`
/// fields are merged into the manifest. Returns the CSV paths.
pub fn write_stability_outputs(
    result: &StabilityResult,
    dir: &Path,
    extra: serde_json::Map<String, serde_json::Value>,
) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut paths = Vec::new();
    for point in &result.points {
        let path = dir.join(format!("{}.csv", grid_point_stem(result.variant, point)));
        let file = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
        write_grid_point_csv(point, std::io::BufWriter::new(file))?;
        paths.push(path);
    }
    let mut manifest = serde_json::Map::new();
    manifest.insert("metadata".into(), serde_json::to_value(&result.metadata)?);
    manifest.insert("variant".into(), serde_json::to_value(result.variant)?);
    let points: Vec<serde_json::Value> = result
        .points
        .iter()
        .zip(&paths)
        .map(|(p, path)| {
            serde_json::json!({
                "beta": p.beta,
                "step": p.step,
                "hp": p.hp,
                "conditions": p.conditions,
                "censored": p.censored,
                "completed": p.completed,
                "csv": path.file_name().map(|f| f.to_string_lossy().into_owned()),
            })
        })
        .collect();
    manifest.insert("grid".into(), serde_json::Value::Array(points));
    manifest.extend(extra);
    let path = dir.join("manifest.json");
    let text = serde_json::to_string_pretty(&serde_json::Value::Object(manifest))?;
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(paths)
}

/// Outcome of the "nondecreasing along the grid" test.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrendReport {
    pub means: Vec<f64>,
    pub pooled_se: Vec<f64>,
    /// Positions `j` where `means[j+1] < means[j]`.
    pub inversions: Vec<usize>,
    pub passed: bool,
}

/// Passes when the sequence is nondecreasing, or has a single inversion
/// whose drop is within one pooled standard error
/// `sqrt((s_j² + s_{j+1}²)/reps)`.
pub fn trend_check(means: &[f64], stds: &[f64], reps: usize) -> TrendReport {
    let r = reps.max(1) as f64;
    let pooled_se: Vec<f64> = stds
        .windows(2)
        .map(|w| ((w[0] * w[0] + w[1] * w[1]) / r).sqrt())
        .collect();
    let inversions: Vec<usize> = means
        .windows(2)
        .enumerate()
        .filter(|(_, w)| !(w[1] >= w[0]))
        .map(|(j, _)| j)
        .collect();
    let passed = match inversions.as_slice() {
        [] => true,
        [j] => means[*j] - means[*j + 1] <= pooled_se[*j],
        _ => false,
    };
    TrendReport {
        means: means.to_vec(),
        pooled_se,
        inversions,
        passed,
    }
}

#[derive(Clone, Debug)]
pub struct BoundCheckConfig {
    pub loss: LossKind,
    pub variant: Variant,
    pub hp: HyperParams,
    /// Number of steps `t`; the bound is on `w_{t+1}`.
    pub t: usize,
    /// Number of `(i, seed, replacement)` draws.
    pub samples: usize,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BoundCheckResult {
    /// Mean of `‖w_{t+1} − w_{t+1}^{(i)}‖²` over the samples.
    pub empirical: f64,
    pub empirical_std: f64,
    pub mean_sum_risk: f64,
    pub theoretical: BoundReport,
    pub holds: bool,
    /// `theoretical / empirical`; infinite when the empirical value is zero.
    pub margin_ratio: f64,
    pub samples: usize,
    pub estimator: &'static str,
}

/// Monte-Carlo comparison of on-average model stability against the
/// stability bound. Refuses to run when the variant's step condition fails.
pub fn run_bound_check(train: &Dataset, pool: &Dataset, cfg: &BoundCheckConfig) -> Result<BoundCheckResult> {
    if cfg.samples == 0 || cfg.t == 0 {
        return Err(Error::InvalidArgument("samples and t must be positive".into()));
    }
    let alpha = smoothness(train, cfg.loss).alpha;
    let condition = stability_condition(&cfg.hp, alpha, cfg.variant);
    if !condition.satisfied {
        return Err(Error::PreconditionRefused(format!(
            "{:?}: lhs {} > rhs {}",
            condition.which, condition.lhs, condition.rhs
        )));
    }
    let hp = cfg.hp.with_iterations(cfg.t)?;
    let n = train.n();
    let w1 = WeightVector::zeros(train.dim());
    let draws: Vec<(f64, f64)> = (0..cfg.samples)
        .into_par_iter()
        .map(|s| {
            let seed = cfg.seed.wrapping_add(s as u64);
            let spec = draw_neighbor(train, pool, seed);
            let stream = SampleStream::new(seed, n)?;
            let summary = coupled_divergence(train, &spec, cfg.loss, &hp, w1.clone(), &stream, cfg.t, true)?;
            Ok((summary.final_dist_sq, summary.sum_risk.unwrap_or(0.0)))
        })
        .collect::<Result<Vec<_>>>()?;
    let dists: Vec<Vec<f64>> = draws.iter().map(|d| vec![d.0]).collect();
    let (mean, std) = aggregate(&dists)?;
    let mean_sum_risk = draws.iter().map(|d| d.1).sum::<f64>() / draws.len() as f64;
    let theoretical = stability_bound(&hp, alpha, n, cfg.t, mean_sum_risk, cfg.variant);
    let empirical = mean[0];
    Ok(BoundCheckResult {
        empirical,
        empirical_std: std[0],
        mean_sum_risk,
        holds: empirical <= theoretical.value,
        margin_ratio: if empirical == 0.0 {
            f64::INFINITY
        } else {
            theoretical.value / empirical
        },
        theoretical,
        samples: cfg.samples,
        estimator: "training set held fixed; expectation approximated over (index, algorithm seed, replacement) draws",
    })
}

/// Full-gradient descent with step `1/α`, used as the reference point `w`.
pub fn reference_minimizer(d: &Dataset, kind: LossKind, iterations: usize) -> Result<WeightVector> {
    let alpha = smoothness(d, kind).alpha;
    let mut w = WeightVector::zeros(d.dim());
    if alpha == 0.0 {
        return Ok(w);
    }
    let step = 1.0 / alpha;
    for k in 1..=iterations {
        let g = empirical_gradient(&w, d, kind)?;
        w.axpy(-step, &g);
        if !w.is_finite() {
            return Err(Error::Divergence { step: k });
        }
    }
    Ok(w)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OptCheckPoint {
    pub t: usize,
    /// Mean over seeds of `L_S(w̄_t) − L_S(w_ref)`.
    pub empirical_gap: f64,
    pub bound: BoundReport,
    pub holds: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OptCheckResult {
    pub ref_risk: f64,
    pub dist_sq: f64,
    pub points: Vec<OptCheckPoint>,
}

/// Compares the optimization bound at `w_ref` with the averaged-iterate gap
/// `E_A[L_S(w̄_t)] − L_S(w_ref)` estimated over `seeds` algorithm seeds.
pub fn run_optimization_check(
    train: &Dataset,
    loss: LossKind,
    variant: Variant,
    hp: &HyperParams,
    ts: &[usize],
    seeds: usize,
    seed: u64,
    w_ref: &WeightVector,
) -> Result<OptCheckResult> {
    let t_max = *ts
        .iter()
        .max()
        .ok_or_else(|| Error::InvalidArgument("need at least one t".into()))?;
    if seeds == 0 || ts.contains(&0) {
        return Err(Error::InvalidArgument("seeds and every t must be positive".into()));
    }
    let alpha = smoothness(train, loss).alpha;
    let hp = hp.with_iterations(t_max)?;
    let w1 = WeightVector::zeros(train.dim());
    let ref_risk = empirical_risk(w_ref, train, loss)?;
    let dist_sq = w1.dist_sq(w_ref);

    let risks_per_seed: Vec<Vec<f64>> = (0..seeds)
        .into_par_iter()
        .map(|s| {
            let stream = SampleStream::new(seed.wrapping_add(s as u64), train.n())?;
            let traj = run(train, loss, &hp, w1.clone(), &stream, RiskRecording::Off)?;
            ts.iter()
                .map(|&t| empirical_risk(&average_iterate(&traj, t)?, train, loss))
                .collect()
        })
        .collect::<Result<Vec<_>>>()?;

    let points = ts
        .iter()
        .enumerate()
        .map(|(j, &t)| {
            let mean = risks_per_seed.iter().map(|r| r[j]).sum::<f64>() / seeds as f64;
            let empirical_gap = mean - ref_risk;
            let bound = optimization_bound(&hp, alpha, dist_sq, t, ref_risk, variant);
            OptCheckPoint {
                t,
                empirical_gap,
                holds: empirical_gap <= bound.value,
                bound,
            }
        })
        .collect();
    Ok(OptCheckResult {
        ref_risk,
        dist_sq,
        points,
    })
}

/// Which side diverged, for reporting censored repetitions.
pub fn divergence_side(e: &Error) -> Option<RunSide> {
    match e {
        Error::CoupledDivergence { side, .. } => Some(*side),
        _ => None,
    }
}

/// Wall-clock helper for manifests.
pub fn timed<T>(f: impl FnOnce() -> Result<T>) -> Result<(T, f64)> {
    let start = Instant::now();
    let out = f()?;
    Ok((out, start.elapsed().as_secs_f64()))
}
