//! Numerical invariant checks run by `verify-invariants`: loss-function
//! lemmas, exact trajectory identities, the momentum-recursion inequality,
//! and agreement between the different forms of the optimizer.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::dataset::{Dataset, Example, NeighborSpec, SparseVector};
use crate::error::{Error, Result};
use crate::harness::DataSource;
use crate::losses::{
    example_smoothness, loss_grad, loss_value, smoothness, LossKind, WeightVector,
};
use crate::optimizer::{
    coupled_run, hb_params, lookahead_step, nesterov_params, run, sgd_params, sgdm_step,
    HyperParams, LookaheadState, RiskRecording, SampleStream, SgdmState, Trajectory, Variant,
};
use crate::theory::{
    auxiliary_sequence, max_eta_hb, max_gamma_nesterov, verify_dist_identity,
    verify_m_recursion_bound, verify_y_identity,
};

/// Deliberate defects for checking that the suite can fail.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Fault {
    /// Checks the y-recursion with `γ̃` inflated by 1%.
    WrongEffectiveStep,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SuiteConfig {
    pub data: DataSource,
    pub losses: Vec<LossKind>,
    pub betas: Vec<f64>,
    /// Steps are this fraction of the admissible maximum.
    pub step_fraction: f64,
    pub identity_steps: usize,
    pub recursion_steps: usize,
    pub probes: usize,
    pub frequency_draws: usize,
    pub seed: u64,
    pub fault: Option<Fault>,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        Self {
            data: DataSource::Gaussian { n: 200, d: 10, seed: 0 },
            losses: LossKind::ALL.to_vec(),
            betas: vec![0.0, 0.5, 0.9, 0.99],
            step_fraction: 0.5,
            identity_steps: 1000,
            recursion_steps: 500,
            probes: 10_000,
            frequency_draws: 1_000_000,
            seed: 0,
            fault: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckStatus {
    Pass,
    Fail,
    Skipped,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub loss: Option<LossKind>,
    pub beta: Option<f64>,
    pub variant: Option<Variant>,
    /// What `value` measures, e.g. `max_relative_residual` or `min_margin`.
    pub metric: &'static str,
    pub value: f64,
    pub tolerance: f64,
    pub status: CheckStatus,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SuiteReport {
    pub alpha: Vec<(LossKind, f64)>,
    pub checks: Vec<CheckResult>,
    pub passed: bool,
}

impl SuiteReport {
    pub fn find(&self, name: &str) -> impl Iterator<Item = &CheckResult> {
        let name = name.to_string();
        self.checks.iter().filter(move |c| c.name == name)
    }

    pub fn failures(&self) -> impl Iterator<Item = &CheckResult> {
        self.checks.iter().filter(|c| c.status == CheckStatus::Fail)
    }
}

struct Check {
    name: &'static str,
    loss: Option<LossKind>,
    beta: Option<f64>,
    variant: Option<Variant>,
}

impl Check {
    fn new(name: &'static str) -> Self {
        Self { name, loss: None, beta: None, variant: None }
    }

    fn loss(mut self, loss: LossKind) -> Self {
        self.loss = Some(loss);
        self
    }

    fn beta(mut self, beta: f64) -> Self {
        self.beta = Some(beta);
        self
    }

    fn variant(mut self, v: Variant) -> Self {
        self.variant = Some(v);
        self
    }

    fn finish(self, metric: &'static str, value: f64, tolerance: f64, passed: bool) -> CheckResult {
        CheckResult {
            name: self.name.to_string(),
            loss: self.loss,
            beta: self.beta,
            variant: self.variant,
            metric,
            value,
            tolerance,
            status: if passed { CheckStatus::Pass } else { CheckStatus::Fail },
            note: None,
        }
    }

    /// Passes when `value ≤ tolerance`.
    fn at_most(self, metric: &'static str, value: f64, tolerance: f64) -> CheckResult {
        self.finish(metric, value, tolerance, value <= tolerance)
    }

    /// Passes when `value ≥ −tolerance`.
    fn margin(self, value: f64, tolerance: f64) -> CheckResult {
        self.finish("min_margin", value, tolerance, value >= -tolerance)
    }

    fn skipped(self, note: &str) -> CheckResult {
        let mut r = self.finish("none", f64::NAN, f64::NAN, true);
        r.status = CheckStatus::Skipped;
        r.note = Some(note.to_string());
        r
    }
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn random_point(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    let scale = 10f64.powf(rng.random_range(-1.0..0.5));
    (0..dim).map(|_| scale * normal(rng)).collect()
}

/// Either a dataset example or a fresh random sparse example.
fn random_example(rng: &mut ChaCha8Rng, d: &Dataset, loss: LossKind) -> Result<Example> {
    if rng.random_bool(0.5) {
        return Ok(d.example(rng.random_range(1..=d.n())).clone());
    }
    let mut entries = Vec::new();
    for j in 1..=d.dim() {
        if rng.random_bool(0.5) {
            entries.push((j, normal(rng)));
        }
    }
    let label = match loss {
        LossKind::Logistic => {
            if rng.random_bool(0.5) {
                1.0
            } else {
                -1.0
            }
        }
        LossKind::Squared => normal(rng),
    };
    Ok(Example::new(SparseVector::new(entries, d.dim())?, label))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Self-bounding, co-coercivity, convexity and finite-difference gradients
/// on `probes` random `(w, w′, z)` triples.
pub fn lemma_checks(d: &Dataset, loss: LossKind, probes: usize, seed: u64) -> Result<Vec<CheckResult>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dim = d.dim();
    let mut self_bound = f64::INFINITY;
    let mut cocoercive = f64::INFINITY;
    let mut convex = f64::INFINITY;
    let mut fd_error: f64 = 0.0;
    let mut cocoercive_probes = 0usize;
    for p in 0..probes {
        let z = random_example(&mut rng, d, loss)?;
        let w = random_point(&mut rng, dim);
        let w2 = random_point(&mut rng, dim);
        let alpha_z = example_smoothness(&z, loss);
        let (l1, l2) = (loss_value(&w, &z, loss)?, loss_value(&w2, &z, loss)?);
        let (g1, g2) = (loss_grad(&w, &z, loss)?, loss_grad(&w2, &z, loss)?);

        // squared loss attains equality, so the slack has to scale with the magnitude
        let rhs = 2.0 * alpha_z * l1;
        self_bound = self_bound.min(rhs + 1e-12 * rhs.max(1.0) - g1.norm_sq());

        if alpha_z > 0.0 {
            cocoercive_probes += 1;
            let dw: Vec<f64> = w.iter().zip(&w2).map(|(a, b)| a - b).collect();
            let dg: Vec<f64> = g1.iter().zip(g2.iter()).map(|(a, b)| a - b).collect();
            cocoercive = cocoercive.min(dot(&dw, &dg) - dot(&dg, &dg) / alpha_z);
        }

        let diff: Vec<f64> = w.iter().zip(&w2).map(|(a, b)| a - b).collect();
        convex = convex.min(l1 - l2 - dot(&g2, &diff));

        // central differences are costly, so only a subset of probes get them
        if p % 10 == 0 {
            let h = 1e-6;
            let scale = 1.0f64.max(g1.iter().fold(0.0, |m: f64, v| m.max(v.abs())));
            let mut wp = w.clone();
            for j in 0..dim {
                let orig = wp[j];
                wp[j] = orig + h;
                let up = loss_value(&wp, &z, loss)?;
                wp[j] = orig - h;
                let down = loss_value(&wp, &z, loss)?;
                wp[j] = orig;
                let fd = (up - down) / (2.0 * h);
                fd_error = fd_error.max((fd - g1[j]).abs() / scale);
            }
        }
    }
    let mut out = vec![
        Check::new("self_bounding").loss(loss).margin(self_bound, 0.0),
        Check::new("convexity").loss(loss).margin(convex, 1e-10),
        Check::new("gradient_finite_difference")
            .loss(loss)
            .at_most("max_relative_error", fd_error, 1e-5),
    ];
    out.insert(
        1,
        if cocoercive_probes == 0 {
            Check::new("co_coercivity").loss(loss).skipped("every probe had alpha_z = 0")
        } else {
            Check::new("co_coercivity").loss(loss).margin(cocoercive, 1e-10)
        },
    );
    Ok(out)
}

/// Step for `variant` at `fraction` of the admissible maximum.
pub fn admissible_params(
    variant: Variant,
    beta: f64,
    alpha: f64,
    fraction: f64,
    iterations: usize,
) -> Result<HyperParams> {
    match variant {
        Variant::Hb => hb_params(fraction * max_eta_hb(beta, alpha)?, beta, iterations),
        Variant::Nesterov => {
            nesterov_params(fraction * max_gamma_nesterov(beta, alpha)?, beta, iterations)
        }
        Variant::General => Err(Error::InvalidArgument(
            "no single admissible maximum for the general variant".into(),
        )),
    }
}

fn momentum_unrolling(traj: &Trajectory) -> f64 {
    let b = traj.hp.beta;
    let buffers = traj.momentum_buffers();
    let dim = traj.iterates[0].len();
    let mut worst: f64 = 0.0;
    for t in 1..buffers.len() {
        let mut direct = vec![0.0; dim];
        let mut weight = 1.0;
        for j in (0..t).rev() {
            for (c, g) in direct.iter_mut().zip(traj.gradients[j].iter()) {
                *c += weight * g;
            }
            weight *= b;
        }
        let err = buffers[t].dist_sq(&direct).sqrt();
        worst = worst.max(err / (1.0 + buffers[t].norm()));
    }
    worst
}

fn replay_mismatches(traj: &Trajectory) -> Result<usize> {
    let mut state = SgdmState::new(traj.iterates[0].clone());
    let mut mismatches = 0;
    for (k, g) in traj.gradients.iter().enumerate() {
        state = sgdm_step(state, g, &traj.hp)?;
        let same = state
            .w
            .iter()
            .zip(traj.iterates[k + 1].iter())
            .all(|(a, b)| a.to_bits() == b.to_bits());
        if !same {
            mismatches += 1;
        }
    }
    Ok(mismatches)
}

fn lookahead_deviation(traj: &Trajectory) -> Result<f64> {
    let mut s = LookaheadState::new(traj.iterates[0].clone());
    let mut worst: f64 = 0.0;
    for (k, g) in traj.gradients.iter().enumerate() {
        s = lookahead_step(s, g, &traj.hp)?;
        for (a, b) in s.w.iter().zip(traj.iterates[k + 1].iter()) {
            worst = worst.max((a - b).abs());
        }
    }
    Ok(worst)
}

fn identity_checks(
    d: &Dataset,
    loss: LossKind,
    alpha: f64,
    beta: f64,
    variant: Variant,
    cfg: &SuiteConfig,
) -> Result<Vec<CheckResult>> {
    let tag = |name| Check::new(name).loss(loss).beta(beta).variant(variant);
    if variant == Variant::Nesterov && beta == 0.0 {
        const NOTE: &str = "eta = beta * gamma is degenerate at beta = 0";
        return Ok(vec![
            tag("y_identity").skipped(NOTE),
            tag("dist_identity").skipped(NOTE),
            tag("nesterov_equivalence").skipped(NOTE),
        ]);
    }
    let hp = admissible_params(variant, beta, alpha, cfg.step_fraction, cfg.identity_steps)?;
    let stream = SampleStream::new(cfg.seed, d.n())?;
    let traj = run(d, loss, &hp, WeightVector::zeros(d.dim()), &stream, RiskRecording::Off)?;
    let mut aux = auxiliary_sequence(&traj);
    if cfg.fault == Some(Fault::WrongEffectiveStep) {
        aux.effective_step *= 1.01;
    }
    let y = verify_y_identity(&aux, &traj);
    let dist = verify_dist_identity(&aux, &traj);
    let mut out = vec![
        tag("y_identity").at_most("max_relative_residual", y.relative, y.tolerance),
        tag("dist_identity").at_most("max_relative_residual", dist.max_relative_residual, 1e-10),
        tag("dist_bound").margin(dist.min_bound_margin, 1e-10),
        tag("momentum_unrolling").at_most("max_relative_error", momentum_unrolling(&traj), 1e-10),
        {
            let bad = replay_mismatches(&traj)?;
            tag("trajectory_replay").at_most("mismatched_iterates", bad as f64, 0.0)
        },
    ];
    if variant == Variant::Nesterov {
        out.push(tag("nesterov_equivalence").at_most("max_abs_deviation", lookahead_deviation(&traj)?, 1e-9));
    }
    Ok(out)
}

fn recursion_check(d: &Dataset, loss: LossKind, alpha: f64, beta: f64, cfg: &SuiteConfig) -> Result<Vec<CheckResult>> {
    let tag = || Check::new("momentum_recursion").loss(loss).beta(beta).variant(Variant::Hb);
    if beta == 0.0 {
        return Ok(vec![tag().skipped("the inequality is trivial without momentum")]);
    }
    let hp = admissible_params(Variant::Hb, beta, alpha, cfg.step_fraction, cfg.recursion_steps)?;
    let stream = SampleStream::new(cfg.seed.wrapping_add(1), d.n())?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    // several positions so that the perturbed example is hit many times
    let mut out = Vec::new();
    let mut worst = f64::INFINITY;
    for _ in 0..4 {
        let spec = NeighborSpec {
            index: rng.random_range(1..=d.n()),
            replacement: d.example(rng.random_range(1..=d.n())).clone(),
        };
        let trace = coupled_run(d, &spec, loss, &hp, WeightVector::zeros(d.dim()), &stream)?;
        worst = worst.min(verify_m_recursion_bound(&trace).min_margin);

        let first = trace.base.indices.iter().position(|&i| i == spec.index);
        let until = first.map_or(trace.distances.len(), |p| p + 1);
        if trace.distances[..until].iter().any(|&v| v != 0.0) {
            out.push(
                Check::new("pre_hit_zero_divergence")
                    .loss(loss)
                    .beta(beta)
                    .finish("nonzero_before_hit", 1.0, 0.0, false),
            );
        }
    }
    out.push(tag().margin(worst, 1e-10));
    Ok(out)
}

fn beta_zero_reduction(d: &Dataset, loss: LossKind, alpha: f64, cfg: &SuiteConfig) -> Result<CheckResult> {
    let step = cfg.step_fraction * max_eta_hb(0.0, alpha)?;
    let general = HyperParams::new(0.0, 0.3 * step, 0.7 * step, cfg.identity_steps)?;
    let plain = sgd_params(step, cfg.identity_steps)?;
    let stream = SampleStream::new(cfg.seed, d.n())?;
    let w1 = WeightVector::zeros(d.dim());
    let a = run(d, loss, &general, w1.clone(), &stream, RiskRecording::Off)?;
    let b = run(d, loss, &plain, w1, &stream, RiskRecording::Off)?;
    let worst = a
        .iterates
        .iter()
        .zip(&b.iterates)
        .flat_map(|(x, y)| x.iter().zip(y.iter()).map(|(p, q)| (p - q).abs()).collect::<Vec<_>>())
        .fold(0.0, f64::max);
    Ok(Check::new("beta_zero_reduction").loss(loss).at_most("max_abs_deviation", worst, 1e-12))
}

fn frequency_check(cfg: &SuiteConfig) -> Result<CheckResult> {
    let n = 10;
    let stream = SampleStream::new(cfg.seed, n)?;
    let mut counts = vec![0usize; n];
    for i in stream.iter().take(cfg.frequency_draws) {
        counts[i - 1] += 1;
    }
    let worst = counts
        .iter()
        .map(|&c| (c as f64 / cfg.frequency_draws as f64 - 0.1).abs() / 0.1)
        .fold(0.0, f64::max);
    Ok(Check::new("sampling_frequency").at_most("max_relative_deviation", worst, 0.01))
}

pub fn run_suite(cfg: &SuiteConfig) -> Result<SuiteReport> {
    if cfg.betas.is_empty() || cfg.losses.is_empty() {
        return Err(Error::InvalidArgument("suite needs at least one beta and one loss".into()));
    }
    if !(cfg.step_fraction > 0.0 && cfg.step_fraction <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "step fraction {} not in (0, 1]",
            cfg.step_fraction
        )));
    }
    let d = cfg.data.load()?;
    let mut checks = Vec::new();
    let mut alphas = Vec::new();
    for &loss in &cfg.losses {
        let alpha = smoothness(&d, loss).alpha;
        if alpha == 0.0 {
            return Err(Error::Degenerate("dataset has alpha = 0; no admissible maximum".into()));
        }
        alphas.push((loss, alpha));
        checks.extend(lemma_checks(&d, loss, cfg.probes, cfg.seed)?);
        for &beta in &cfg.betas {
            for variant in [Variant::Hb, Variant::Nesterov] {
                checks.extend(identity_checks(&d, loss, alpha, beta, variant, cfg)?);
            }
            checks.extend(recursion_check(&d, loss, alpha, beta, cfg)?);
        }
        checks.push(beta_zero_reduction(&d, loss, alpha, cfg)?);
    }
    checks.push(frequency_check(cfg)?);
    let passed = checks.iter().all(|c| c.status != CheckStatus::Fail);
    Ok(SuiteReport { alpha: alphas, checks, passed })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SuiteConfig {
        SuiteConfig {
            data: DataSource::Gaussian { n: 50, d: 5, seed: 3 },
            identity_steps: 200,
            recursion_steps: 100,
            probes: 500,
            ..SuiteConfig::default()
        }
    }

    #[test]
    fn small_suite_passes() {
        let r = run_suite(&small()).unwrap();
        let fails: Vec<_> = r.failures().collect();
        assert!(r.passed, "{fails:#?}");
        assert!(r.find("nesterov_equivalence").any(|c| c.status == CheckStatus::Pass));
    }

    #[test]
    fn fault_is_caught() {
        let cfg = SuiteConfig { fault: Some(Fault::WrongEffectiveStep), ..small() };
        let r = run_suite(&cfg).unwrap();
        assert!(!r.passed);
        assert!(r.failures().all(|c| c.name == "y_identity"));
    }

    #[test]
    fn beta_zero_skips_nesterov() {
        let cfg = SuiteConfig { betas: vec![0.0], ..small() };
        let r = run_suite(&cfg).unwrap();
        assert!(r.passed);
        let nest: Vec<_> = r.checks.iter().filter(|c| c.variant == Some(Variant::Nesterov)).collect();
        assert!(!nest.is_empty());
        assert!(nest.iter().all(|c| c.status == CheckStatus::Skipped));
    }
}
