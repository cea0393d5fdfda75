//! Generalized SGD with momentum:
//!
//! ```text
//! m_t     = β m_{t−1} + g_t
//! w_{t+1} = w_t − γ g_t − η m_t
//! ```
//!
//! `β = 0` is plain SGD with step `γ + η`, `γ = 0` is heavy-ball momentum and
//! `η = βγ` is Nesterov momentum, which also has the look-ahead form
//! implemented by [`LookaheadState`].

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{make_neighbor, Dataset, Example, NeighborSpec};
use crate::error::{Error, Result, RunSide};
use crate::losses::{dist_sq, empirical_risk, grad_scale_at_margin, LossKind, WeightVector};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    /// Heavy-ball, `γ = 0`.
    Hb,
    /// Nesterov, `η = βγ`.
    Nesterov,
    /// Free `(β, γ, η)`.
    General,
}

impl Variant {
    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Hb => "hb",
            Variant::Nesterov => "nesterov",
            Variant::General => "general",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "hb" => Ok(Variant::Hb),
            "nesterov" => Ok(Variant::Nesterov),
            "general" => Ok(Variant::General),
            other => Err(Error::InvalidArgument(format!(
                "unknown variant `{other}` (expected hb | nesterov | general)"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HyperParams {
    pub beta: f64,
    pub gamma: f64,
    pub eta: f64,
    pub iterations: usize,
}

impl HyperParams {
    pub fn new(beta: f64, gamma: f64, eta: f64, iterations: usize) -> Result<Self> {
        if !(0.0..1.0).contains(&beta) {
            return Err(Error::InvalidHyperParams(format!("beta {beta} not in [0, 1)")));
        }
        if !(gamma >= 0.0 && gamma.is_finite()) {
            return Err(Error::InvalidHyperParams(format!("gamma {gamma} must be >= 0")));
        }
        if !(eta > 0.0 && eta.is_finite()) {
            return Err(Error::InvalidHyperParams(format!("eta {eta} must be > 0")));
        }
        if iterations == 0 {
            return Err(Error::InvalidHyperParams("iterations must be positive".into()));
        }
        Ok(Self {
            beta,
            gamma,
            eta,
            iterations,
        })
    }

    pub fn with_iterations(self, iterations: usize) -> Result<Self> {
        Self::new(self.beta, self.gamma, self.eta, iterations)
    }

    /// `γ + η/(1−β)`, the step of the auxiliary plain-SGD sequence.
    pub fn effective_step(&self) -> f64 {
        self.gamma + self.eta / (1.0 - self.beta)
    }

    /// Whether `η = βγ` holds up to rounding.
    pub fn is_nesterov(&self) -> bool {
        let target = self.beta * self.gamma;
        (self.eta - target).abs() <= 1e-14 * self.eta.abs().max(target.abs())
    }
}

/// Heavy-ball parameters: `γ = 0`.
pub fn hb_params(eta: f64, beta: f64, iterations: usize) -> Result<HyperParams> {
    HyperParams::new(beta, 0.0, eta, iterations)
}

/// Nesterov parameters: `η = βγ`. Needs `β > 0` so that `η > 0`.
pub fn nesterov_params(gamma: f64, beta: f64, iterations: usize) -> Result<HyperParams> {
    if beta <= 0.0 {
        return Err(Error::InvalidHyperParams(
            "Nesterov form needs beta > 0 (use plain SGD for beta = 0)".into(),
        ));
    }
    if gamma <= 0.0 {
        return Err(Error::InvalidHyperParams(format!("gamma {gamma} must be > 0")));
    }
    HyperParams::new(beta, gamma, beta * gamma, iterations)
}

/// Plain SGD with constant step.
pub fn sgd_params(step: f64, iterations: usize) -> Result<HyperParams> {
    hb_params(step, 0.0, iterations)
}

/// Parameters for a variant and a grid value (`η` for hb/general, `γ` for
/// nesterov). Nesterov at `β = 0` falls back to plain SGD with step `γ`.
pub fn variant_params(
    variant: Variant,
    step: f64,
    beta: f64,
    gamma: f64,
    iterations: usize,
) -> Result<HyperParams> {
    match variant {
        Variant::Hb => hb_params(step, beta, iterations),
        Variant::Nesterov if beta == 0.0 => sgd_params(step, iterations),
        Variant::Nesterov => nesterov_params(step, beta, iterations),
        Variant::General => HyperParams::new(beta, gamma, step, iterations),
    }
}

/// Iterate and momentum buffer of the m-form recursion.
#[derive(Clone, Debug, PartialEq)]
pub struct SgdmState {
    pub w: WeightVector,
    pub m: WeightVector,
    pub step: usize,
}

impl SgdmState {
    pub fn new(w1: WeightVector) -> Self {
        let m = WeightVector::zeros(w1.len());
        Self { w: w1, m, step: 0 }
    }

    fn update_sparse(&mut self, scale: f64, x: &[(usize, f64)], hp: &HyperParams) -> Result<()> {
        let step = self.step + 1;
        if !scale.is_finite() {
            return Err(Error::Divergence { step });
        }
        for mi in self.m.iter_mut() {
            *mi *= hp.beta;
        }
        for &(i, v) in x {
            self.m[i - 1] += scale * v;
        }
        for &(i, v) in x {
            self.w[i - 1] -= hp.gamma * (scale * v);
        }
        let mut finite = true;
        for (wi, mi) in self.w.iter_mut().zip(self.m.iter()) {
            *wi -= hp.eta * mi;
            finite &= wi.is_finite();
        }
        if !finite {
            return Err(Error::Divergence { step });
        }
        self.step = step;
        Ok(())
    }

    /// One update with the gradient of `z` at the current iterate.
    pub fn step_on(&mut self, z: &Example, kind: LossKind, hp: &HyperParams) -> Result<()> {
        let scale = grad_scale_at_margin(z.features.dot(&self.w), z.label, kind);
        self.update_sparse(scale, z.features.entries(), hp)
    }
}

/// `m' = βm + g`, `w' = w − γg − ηm'`.
pub fn sgdm_step(mut s: SgdmState, g: &[f64], hp: &HyperParams) -> Result<SgdmState> {
    if g.len() != s.w.len() {
        return Err(Error::DimensionMismatch {
            expected: s.w.len(),
            got: g.len(),
        });
    }
    let step = s.step + 1;
    if g.iter().any(|v| !v.is_finite()) {
        return Err(Error::Divergence { step });
    }
    for ((wi, mi), gi) in s.w.iter_mut().zip(s.m.iter_mut()).zip(g) {
        *mi = hp.beta * *mi + gi;
        *wi = *wi - hp.gamma * gi - hp.eta * *mi;
    }
    if !s.w.is_finite() {
        return Err(Error::Divergence { step });
    }
    s.step = step;
    Ok(s)
}

/// State of the look-ahead Nesterov form
/// `u_t = w_t − γ g_t`, `w_{t+1} = u_t + β(u_t − u_{t−1})`.
#[derive(Clone, Debug, PartialEq)]
pub struct LookaheadState {
    pub u_prev: WeightVector,
    pub u_curr: WeightVector,
    pub w: WeightVector,
    pub step: usize,
}

impl LookaheadState {
    /// `u_0 = w_1`, which makes this form coincide with the m-form from step one.
    pub fn new(w1: WeightVector) -> Self {
        Self {
            u_prev: w1.clone(),
            u_curr: w1.clone(),
            w: w1,
            step: 0,
        }
    }
}

pub fn lookahead_step(
    mut s: LookaheadState,
    g: &[f64],
    hp: &HyperParams,
) -> Result<LookaheadState> {
    if !hp.is_nesterov() {
        return Err(Error::InvalidHyperParams(format!(
            "look-ahead form needs eta = beta * gamma (eta {}, beta {}, gamma {})",
            hp.eta, hp.beta, hp.gamma
        )));
    }
    if g.len() != s.w.len() {
        return Err(Error::DimensionMismatch {
            expected: s.w.len(),
            got: g.len(),
        });
    }
    let step = s.step + 1;
    if g.iter().any(|v| !v.is_finite()) {
        return Err(Error::Divergence { step });
    }
    let u_new: WeightVector = s
        .w
        .iter()
        .zip(g)
        .map(|(w, g)| w - hp.gamma * g)
        .collect::<Vec<_>>()
        .into();
    let w_next: WeightVector = u_new
        .iter()
        .zip(s.u_curr.iter())
        .map(|(u, up)| u + hp.beta * (u - up))
        .collect::<Vec<_>>()
        .into();
    if !w_next.is_finite() {
        return Err(Error::Divergence { step });
    }
    s.u_prev = std::mem::replace(&mut s.u_curr, u_new);
    s.w = w_next;
    s.step = step;
    Ok(s)
}

/// Deterministic index stream `k ↦ i_k ∈ [1, n]`.
///
/// Each draw reads from its own ChaCha8 block (position `16·(k−1)`), so
/// `index(k)` is a pure function of `(seed, k)` and random access is cheap.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleStream {
    pub seed: u64,
    pub n: usize,
}

impl SampleStream {
    pub fn new(seed: u64, n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidArgument("sample stream needs n >= 1".into()));
        }
        Ok(Self { seed, n })
    }

    fn draw(rng: &mut ChaCha8Rng, n: usize, k: usize) -> usize {
        rng.set_word_pos(16 * (k as u128 - 1));
        rng.random_range(0..n) + 1
    }

    pub fn index(&self, k: usize) -> usize {
        assert!(k >= 1, "sample positions are 1-based");
        Self::draw(&mut ChaCha8Rng::seed_from_u64(self.seed), self.n, k)
    }

    /// `i_1, i_2, …`, identical to calling [`index`](Self::index) for each `k`.
    pub fn iter(&self) -> impl Iterator<Item = usize> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let n = self.n;
        (1..).map(move |k| Self::draw(&mut rng, n, k))
    }
}

pub fn sample_index(stream: &SampleStream, k: usize) -> usize {
    stream.index(k)
}

/// How often `L_S(w_k)` is recorded during a run.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RiskRecording {
    Off,
    /// Record at `k = 1, 1 + s, 1 + 2s, …` up to `T + 1`.
    Every(usize),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    /// `w_1 … w_{T+1}`
    pub iterates: Vec<WeightVector>,
    /// `g_1 … g_T`
    pub gradients: Vec<WeightVector>,
    /// `i_1 … i_T`
    pub indices: Vec<usize>,
    /// `L_S(w_k)` at `k = 1 + j·risk_stride`.
    pub risks: Option<Vec<f64>>,
    pub risk_stride: usize,
    pub hp: HyperParams,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.gradients.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gradients.is_empty()
    }

    pub fn final_iterate(&self) -> &WeightVector {
        self.iterates.last().expect("trajectory has w_1")
    }

    /// `m_0 … m_T` rebuilt from the recorded gradients.
    pub fn momentum_buffers(&self) -> Vec<WeightVector> {
        let dim = self.iterates[0].len();
        let mut out = Vec::with_capacity(self.gradients.len() + 1);
        let mut m = WeightVector::zeros(dim);
        out.push(m.clone());
        for g in &self.gradients {
            for (mi, gi) in m.iter_mut().zip(g.iter()) {
                *mi = self.hp.beta * *mi + gi;
            }
            out.push(m.clone());
        }
        out
    }

    /// Step number `k` (1-based) at which `risks[j]` was evaluated.
    pub fn risk_steps(&self) -> Vec<usize> {
        let len = self.risks.as_ref().map_or(0, Vec::len);
        (0..len).map(|j| 1 + j * self.risk_stride).collect()
    }
}

fn check_run_inputs(d: &Dataset, w1: &[f64], stream: &SampleStream) -> Result<()> {
    if w1.len() < d.dim() {
        return Err(Error::DimensionMismatch {
            expected: d.dim(),
            got: w1.len(),
        });
    }
    if stream.n != d.n() {
        return Err(Error::InvalidArgument(format!(
            "sample stream covers {} examples but dataset has {}",
            stream.n,
            d.n()
        )));
    }
    Ok(())
}

/// Runs `hp.iterations` steps of generalized SGDM from `w1`, sampling
/// `i_k` from `stream`.
pub fn run(
    d: &Dataset,
    kind: LossKind,
    hp: &HyperParams,
    w1: WeightVector,
    stream: &SampleStream,
    record: RiskRecording,
) -> Result<Trajectory> {
    check_run_inputs(d, &w1, stream)?;
    let t = hp.iterations;
    let dim = w1.len();
    let stride = match record {
        RiskRecording::Off => 1,
        RiskRecording::Every(s) if s >= 1 => s,
        RiskRecording::Every(_) => {
            return Err(Error::InvalidArgument("risk stride must be positive".into()))
        }
    };
    let mut risks = match record {
        RiskRecording::Off => None,
        RiskRecording::Every(_) => Some(Vec::new()),
    };

    let mut iterates = Vec::with_capacity(t + 1);
    let mut gradients = Vec::with_capacity(t);
    let mut indices = Vec::with_capacity(t);
    let mut state = SgdmState::new(w1);
    iterates.push(state.w.clone());

    for (k, i) in (1..=t).zip(stream.iter()) {
        if let Some(r) = risks.as_mut() {
            if (k - 1) % stride == 0 {
                r.push(empirical_risk(&state.w, d, kind)?);
            }
        }
        let z = d.example(i);
        let scale = grad_scale_at_margin(z.features.dot(&state.w), z.label, kind);
        let mut g = WeightVector::zeros(dim);
        for &(j, v) in z.features.entries() {
            g[j - 1] = scale * v;
        }
        state.update_sparse(scale, z.features.entries(), hp)?;
        gradients.push(g);
        indices.push(i);
        iterates.push(state.w.clone());
    }
    if let Some(r) = risks.as_mut() {
        if t % stride == 0 {
            r.push(empirical_risk(&state.w, d, kind)?);
        }
    }

    Ok(Trajectory {
        iterates,
        gradients,
        indices,
        risks,
        risk_stride: stride,
        hp: *hp,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct CoupledTrace {
    pub base: Trajectory,
    pub neighbor: Trajectory,
    /// `d_k = ‖w_k − w_k'‖` for `k = 1 … T+1`.
    pub distances: Vec<f64>,
    pub perturbed_index: usize,
}

fn tag_side(side: RunSide) -> impl Fn(Error) -> Error {
    move |e| match e {
        Error::Divergence { step } => Error::CoupledDivergence { side, step },
        other => other,
    }
}

/// Runs on `S` and `S^(i)` with the same start and the same index sequence.
pub fn coupled_run(
    s: &Dataset,
    spec: &NeighborSpec,
    kind: LossKind,
    hp: &HyperParams,
    w1: WeightVector,
    stream: &SampleStream,
) -> Result<CoupledTrace> {
    let neighbor_data = make_neighbor(s, spec)?;
    let base = run(s, kind, hp, w1.clone(), stream, RiskRecording::Off)
        .map_err(tag_side(RunSide::Base))?;
    let neighbor = run(&neighbor_data, kind, hp, w1, stream, RiskRecording::Off)
        .map_err(tag_side(RunSide::Neighbor))?;
    let distances = base
        .iterates
        .iter()
        .zip(&neighbor.iterates)
        .map(|(a, b)| a.dist_sq(b).sqrt())
        .collect();
    Ok(CoupledTrace {
        base,
        neighbor,
        distances,
        perturbed_index: spec.index,
    })
}

/// What [`coupled_divergence`] keeps from a coupled run.
#[derive(Clone, Debug, PartialEq)]
pub struct CoupledSummary {
    /// `d_{t+1}` after `t = stride, 2·stride, …` steps.
    pub distances: Vec<f64>,
    /// `‖w_{T+1} − w_{T+1}'‖²`
    pub final_dist_sq: f64,
    /// `Σ_{k=1}^{T} L_S(w_k)` on the base run, when requested.
    pub sum_risk: Option<f64>,
    /// First step whose sampled index is the perturbed one.
    pub first_hit: Option<usize>,
}

/// Streaming coupled run that keeps only strided distances, for long sweeps
/// where storing both trajectories is too expensive. Performs exactly the
/// same arithmetic as [`coupled_run`].
pub fn coupled_divergence(
    s: &Dataset,
    spec: &NeighborSpec,
    kind: LossKind,
    hp: &HyperParams,
    w1: WeightVector,
    stream: &SampleStream,
    stride: usize,
    accumulate_risk: bool,
) -> Result<CoupledSummary> {
    check_run_inputs(s, &w1, stream)?;
    if stride == 0 {
        return Err(Error::InvalidArgument("stride must be positive".into()));
    }
    let neighbor_data = make_neighbor(s, spec)?;
    let mut base = SgdmState::new(w1.clone());
    let mut nb = SgdmState::new(w1);
    let mut distances = Vec::with_capacity(hp.iterations / stride);
    let mut sum_risk = 0.0;
    let mut first_hit = None;

    for (k, i) in (1..=hp.iterations).zip(stream.iter()) {
        if accumulate_risk {
            sum_risk += empirical_risk(&base.w, s, kind)?;
        }
        if i == spec.index && first_hit.is_none() {
            first_hit = Some(k);
        }
        base.step_on(s.example(i), kind, hp)
            .map_err(tag_side(RunSide::Base))?;
        nb.step_on(neighbor_data.example(i), kind, hp)
            .map_err(tag_side(RunSide::Neighbor))?;
        if k % stride == 0 {
            distances.push(finite_dist_sq(&base, &nb, k)?.sqrt());
        }
    }
    Ok(CoupledSummary {
        distances,
        final_dist_sq: finite_dist_sq(&base, &nb, hp.iterations)?,
        sum_risk: accumulate_risk.then_some(sum_risk),
        first_hit,
    })
}

// Iterates near 1e154 are still finite but their squared distance is not.
// Treat that as divergence of the larger run rather than report inf.
fn finite_dist_sq(base: &SgdmState, nb: &SgdmState, step: usize) -> Result<f64> {
    let d = dist_sq(&base.w, &nb.w);
    if d.is_finite() {
        return Ok(d);
    }
    let side = if base.w.norm_sq() >= nb.w.norm_sq() { RunSide::Base } else { RunSide::Neighbor };
    Err(Error::CoupledDivergence { side, step })
}

/// `w̄ = (1/upto) Σ_{k ≤ upto} w_k`.
pub fn average_iterate(traj: &Trajectory, upto: usize) -> Result<WeightVector> {
    if upto < 1 || upto > traj.iterates.len() {
        return Err(Error::IndexOutOfRange {
            index: upto,
            n: traj.iterates.len(),
        });
    }
    let mut acc = WeightVector::zeros(traj.iterates[0].len());
    for w in &traj.iterates[..upto] {
        acc.axpy(1.0, w);
    }
    let inv = 1.0 / upto as f64;
    for v in acc.iter_mut() {
        *v *= inv;
    }
    Ok(acc)
}
