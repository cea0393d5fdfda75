//! Closed-form step-size conditions, stability and optimization bounds, EPR
//! parameter recipes, and exact identities that recorded trajectories must
//! satisfy.
//!
//! Bound evaluators never assert: a violated step-size condition only marks
//! the report as advisory.

use std::collections::BTreeMap;
use std::f64::consts::E;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::{dist_sq, WeightVector};
use crate::optimizer::{CoupledTrace, HyperParams, Trajectory, Variant};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConditionKind {
    /// Step condition of the stability theorem.
    Stab,
    /// Step condition of the optimization theorem.
    Opt,
    /// First EPR condition (same inequality as `Stab`).
    Epr1,
    /// Second EPR condition (same inequality as `Opt`).
    Epr2,
    /// `η ≤ (1−β)²/(α(1+β)(3−β))`
    HbMax,
    /// `γ ≤ 2(1−β)²/(α(3+6β+5β²−2β³))`
    NesterovMax,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ConditionReport {
    pub which: ConditionKind,
    pub lhs: f64,
    pub rhs: f64,
    pub satisfied: bool,
    pub slack: f64,
}

impl ConditionReport {
    fn new(which: ConditionKind, lhs: f64, rhs: f64) -> Self {
        Self {
            which,
            lhs,
            rhs,
            satisfied: lhs <= rhs,
            slack: rhs - lhs,
        }
    }
}

/// `x / α` with the convention `x / 0 = +∞` for `x > 0`.
fn over_alpha(x: f64, alpha: f64) -> f64 {
    if alpha == 0.0 {
        if x > 0.0 {
            f64::INFINITY
        } else {
            0.0
        }
    } else {
        x / alpha
    }
}

/// `(1+β)(3−β)/(1−β)²·η + (β²+3)/(2(1−β)²)·γ ≤ 1/α`
pub fn check_stab_condition(hp: &HyperParams, alpha: f64) -> ConditionReport {
    stab_report(ConditionKind::Stab, hp, alpha)
}

fn stab_report(which: ConditionKind, hp: &HyperParams, alpha: f64) -> ConditionReport {
    let b = hp.beta;
    let c = (1.0 - b) * (1.0 - b);
    let lhs = (1.0 + b) * (3.0 - b) / c * hp.eta + (b * b + 3.0) / (2.0 * c) * hp.gamma;
    ConditionReport::new(which, lhs, over_alpha(1.0, alpha))
}

/// `γ² + 2γη/(1−β) + (1+β)η²/(1−β)² ≤ (2(1−β)γ + 2η)/(3α)`
pub fn check_opt_condition(hp: &HyperParams, alpha: f64) -> ConditionReport {
    opt_report(ConditionKind::Opt, hp, alpha)
}

fn opt_report(which: ConditionKind, hp: &HyperParams, alpha: f64) -> ConditionReport {
    let (b, g, e) = (hp.beta, hp.gamma, hp.eta);
    let lhs = g * g + 2.0 * g * e / (1.0 - b) + (1.0 + b) * e * e / ((1.0 - b) * (1.0 - b));
    let rhs = over_alpha((2.0 * (1.0 - b) * g + 2.0 * e) / 3.0, alpha);
    ConditionReport::new(which, lhs, rhs)
}

/// Both step conditions behind the excess-risk rate.
pub fn check_epr_conditions(hp: &HyperParams, alpha: f64) -> [ConditionReport; 2] {
    [
        stab_report(ConditionKind::Epr1, hp, alpha),
        opt_report(ConditionKind::Epr2, hp, alpha),
    ]
}

fn positive_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("alpha must be positive, got {alpha}")))
    }
}

/// Largest heavy-ball `η` admitted by the stability condition.
pub fn max_eta_hb(beta: f64, alpha: f64) -> Result<f64> {
    positive_alpha(alpha)?;
    let c = 1.0 - beta;
    Ok(c * c / (alpha * (1.0 + beta) * (3.0 - beta)))
}

/// Largest Nesterov `γ` admitted by the stability condition with `η = βγ`.
pub fn max_gamma_nesterov(beta: f64, alpha: f64) -> Result<f64> {
    positive_alpha(alpha)?;
    let c = 1.0 - beta;
    let b2 = beta * beta;
    Ok(2.0 * c * c / (alpha * (3.0 + 6.0 * beta + 5.0 * b2 - 2.0 * b2 * beta)))
}

/// Largest heavy-ball `η` admitted by the optimization condition.
pub fn max_eta_hb_opt(beta: f64, alpha: f64) -> Result<f64> {
    positive_alpha(alpha)?;
    let c = 1.0 - beta;
    Ok(2.0 * c * c / (3.0 * alpha * (1.0 + beta)))
}

/// Largest Nesterov `γ` admitted by the optimization condition.
pub fn max_gamma_nesterov_opt(beta: f64, alpha: f64) -> Result<f64> {
    positive_alpha(alpha)?;
    let c = 1.0 - beta;
    Ok(2.0 * c * c / (3.0 * alpha * (1.0 + beta * beta * beta)))
}

pub fn check_hb_max(hp: &HyperParams, alpha: f64) -> ConditionReport {
    let cap = if alpha == 0.0 {
        f64::INFINITY
    } else {
        max_eta_hb(hp.beta, alpha).unwrap_or(f64::NAN)
    };
    ConditionReport::new(ConditionKind::HbMax, hp.eta, cap)
}

pub fn check_nesterov_max(hp: &HyperParams, alpha: f64) -> ConditionReport {
    let cap = if alpha == 0.0 {
        f64::INFINITY
    } else {
        max_gamma_nesterov(hp.beta, alpha).unwrap_or(f64::NAN)
    };
    ConditionReport::new(ConditionKind::NesterovMax, hp.gamma, cap)
}

/// The step-size condition under which the stability bound of `variant` holds.
pub fn stability_condition(hp: &HyperParams, alpha: f64, variant: Variant) -> ConditionReport {
    match variant {
        Variant::Hb => check_hb_max(hp, alpha),
        Variant::Nesterov => check_nesterov_max(hp, alpha),
        Variant::General => check_stab_condition(hp, alpha),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundFormula {
    StabGeneral,
    StabHb,
    StabNesterov,
    OptGeneral,
    OptHb,
    OptNesterov,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BoundReport {
    pub formula: BoundFormula,
    pub value: f64,
    /// The step-size condition was violated; the value is informational only.
    pub advisory: bool,
    pub condition: ConditionReport,
    #[serde(flatten)]
    pub inputs: BTreeMap<String, f64>,
}

fn inputs(pairs: &[(&str, f64)]) -> BTreeMap<String, f64> {
    pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
}

/// Coefficient multiplying `(8αe/n)·Σ_k L_S(w_k)` in the stability bound.
pub fn stability_coefficient(hp: &HyperParams, n: f64, t: f64, variant: Variant) -> f64 {
    let b = hp.beta;
    let c = 1.0 - b;
    let c2 = c * c;
    let c3 = c2 * c;
    match variant {
        Variant::General => {
            let (g, e) = (hp.gamma, hp.eta);
            2.0 * (1.0 + b) * (1.0 + b) / c3 * e * e
                + 2.0 * g * g
                + b * (b * b + 3.0) / c3 * g * e
                + (g + e) * (c * g + e) * t / (c2 * n)
        }
        Variant::Hb => (2.0 * (1.0 + b) * (1.0 + b) / c3 + t / (c2 * n)) * hp.eta * hp.eta,
        Variant::Nesterov => {
            let g = hp.gamma;
            (2.0 + b * b * (3.0 * b * b + 4.0 * b + 5.0) / c3 + (1.0 + b) * t / (c2 * n)) * g * g
        }
    }
}

/// Upper bound on `E‖w_{t+1} − w_{t+1}^{(i)}‖²` given `Σ_{k≤t} E[L_S(w_k)]`.
///
/// The heavy-ball form reads only `η`, the Nesterov form only `γ`.
pub fn stability_bound(
    hp: &HyperParams,
    alpha: f64,
    n: usize,
    t: usize,
    sum_risk: f64,
    variant: Variant,
) -> BoundReport {
    let (nf, tf) = (n as f64, t as f64);
    let coef = stability_coefficient(hp, nf, tf, variant);
    let value = coef * 8.0 * alpha * E / nf * sum_risk;
    let condition = stability_condition(hp, alpha, variant);
    let formula = match variant {
        Variant::General => BoundFormula::StabGeneral,
        Variant::Hb => BoundFormula::StabHb,
        Variant::Nesterov => BoundFormula::StabNesterov,
    };
    BoundReport {
        formula,
        value,
        advisory: !condition.satisfied,
        condition,
        inputs: inputs(&[
            ("beta", hp.beta),
            ("gamma", hp.gamma),
            ("eta", hp.eta),
            ("alpha", alpha),
            ("n", nf),
            ("t", tf),
            ("sum_risk", sum_risk),
            ("e", E),
        ]),
    }
}

/// Upper bound on `E_A[L_S(w̄_t)] − L_S(w)` for a reference point `w`.
pub fn optimization_bound(
    hp: &HyperParams,
    alpha: f64,
    dist_sq: f64,
    t: usize,
    ref_risk: f64,
    variant: Variant,
) -> BoundReport {
    let b = hp.beta;
    let c = 1.0 - b;
    let tf = t as f64;
    let (value, condition, formula) = match variant {
        Variant::General => {
            let a = c * hp.gamma + hp.eta;
            let v = 3.0 * c * dist_sq / (2.0 * a * tf)
                + (a + b * hp.eta * hp.eta / a) * 3.0 * alpha * ref_risk / (c * c);
            (v, check_opt_condition(hp, alpha), BoundFormula::OptGeneral)
        }
        Variant::Hb => {
            let e = hp.eta;
            let v = 3.0 * c * dist_sq / (2.0 * e * tf)
                + 3.0 * alpha * (1.0 + b) / (c * c) * e * ref_risk;
            let cap = if alpha == 0.0 {
                f64::INFINITY
            } else {
                max_eta_hb_opt(b, alpha).unwrap_or(f64::NAN)
            };
            (v, ConditionReport::new(ConditionKind::Opt, e, cap), BoundFormula::OptHb)
        }
        Variant::Nesterov => {
            let g = hp.gamma;
            let v = 3.0 * c * dist_sq / (2.0 * g * tf)
                + 3.0 * alpha * (b * b * b + 1.0) / (c * c) * g * ref_risk;
            let cap = if alpha == 0.0 {
                f64::INFINITY
            } else {
                max_gamma_nesterov_opt(b, alpha).unwrap_or(f64::NAN)
            };
            (
                v,
                ConditionReport::new(ConditionKind::Opt, g, cap),
                BoundFormula::OptNesterov,
            )
        }
    };
    BoundReport {
        formula,
        value,
        advisory: !condition.satisfied,
        condition,
        inputs: inputs(&[
            ("beta", hp.beta),
            ("gamma", hp.gamma),
            ("eta", hp.eta),
            ("alpha", alpha),
            ("t", tf),
            ("dist_sq", dist_sq),
            ("ref_risk", ref_risk),
        ]),
    }
}

/// `y_k` built from a trajectory, which follows plain SGD with step
/// `γ + η/(1−β)`.
#[derive(Clone, Debug, PartialEq)]
pub struct AuxiliaryTrace {
    pub y: Vec<WeightVector>,
    pub effective_step: f64,
    /// `‖y_{k+1} − y_k + γ̃ g_k‖` for `k = 1 … T`.
    pub residuals: Vec<f64>,
}

/// `y_1 = w_1`, `y_k = (w_k − β w_{k−1} + βγ g_{k−1})/(1−β)` for `k ≥ 2`.
pub fn auxiliary_sequence(traj: &Trajectory) -> AuxiliaryTrace {
    let hp = &traj.hp;
    let b = hp.beta;
    let c1 = 1.0 / (1.0 - b);
    let c2 = b / (1.0 - b);
    let c3 = b * hp.gamma / (1.0 - b);
    let mut y = Vec::with_capacity(traj.iterates.len());
    y.push(traj.iterates[0].clone());
    for k in 1..traj.iterates.len() {
        let (w, w_prev, g_prev) = (&traj.iterates[k], &traj.iterates[k - 1], &traj.gradients[k - 1]);
        let yk: Vec<f64> = (0..w.len())
            .map(|j| c1 * w[j] - c2 * w_prev[j] + c3 * g_prev[j])
            .collect();
        y.push(yk.into());
    }
    let effective_step = hp.effective_step();
    let residuals = y_residuals(&y, &traj.gradients, effective_step);
    AuxiliaryTrace {
        y,
        effective_step,
        residuals,
    }
}

fn y_residuals(y: &[WeightVector], grads: &[WeightVector], step: f64) -> Vec<f64> {
    grads
        .iter()
        .enumerate()
        .map(|(k, g)| {
            (0..g.len())
                .map(|j| {
                    let r = y[k + 1][j] - y[k][j] + step * g[j];
                    r * r
                })
                .sum::<f64>()
                .sqrt()
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct IdentityCheck {
    pub max_residual: f64,
    /// Residual divided by `1 + max_k ‖y_k‖`.
    pub relative: f64,
    pub tolerance: f64,
    pub passed: bool,
}

/// Checks `y_{k+1} = y_k − γ̃ g_k` using `aux.effective_step` as `γ̃`.
pub fn verify_y_identity(aux: &AuxiliaryTrace, traj: &Trajectory) -> IdentityCheck {
    let residuals = y_residuals(&aux.y, &traj.gradients, aux.effective_step);
    let max_residual = residuals.iter().copied().fold(0.0, f64::max);
    let scale = 1.0 + aux.y.iter().map(|y| y.norm()).fold(0.0, f64::max);
    let relative = max_residual / scale;
    let tolerance = 1e-10;
    IdentityCheck {
        max_residual,
        relative,
        tolerance,
        passed: relative <= tolerance,
    }
}

fn relative_gap(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale == 0.0 {
        0.0
    } else {
        (a - b).abs() / scale
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DistanceCheck {
    /// `‖y_k − w_k‖²`
    pub lhs: Vec<f64>,
    /// `β²η²/(1−β)²·‖m_{k−1}‖²`
    pub identity_rhs: Vec<f64>,
    /// `β²η²/(1−β)³·Σ_{j<k} β^{k−1−j}‖g_j‖²`
    pub bound_rhs: Vec<f64>,
    pub max_relative_residual: f64,
    pub min_bound_margin: f64,
    pub passed: bool,
}

/// The exact distance `‖y_k − w_k‖` in terms of the momentum buffer, and
/// the gradient-sum bound derived from it.
pub fn verify_dist_identity(aux: &AuxiliaryTrace, traj: &Trajectory) -> DistanceCheck {
    let hp = &traj.hp;
    let b = hp.beta;
    let c = 1.0 - b;
    let k2 = b * b * hp.eta * hp.eta / (c * c);
    let momenta = traj.momentum_buffers();

    let mut lhs = Vec::with_capacity(aux.y.len());
    let mut identity_rhs = Vec::with_capacity(aux.y.len());
    let mut bound_rhs = Vec::with_capacity(aux.y.len());
    // weighted = Σ_{j<k} β^{k−1−j}‖g_j‖², updated as weighted ← β·weighted + ‖g_{k−1}‖²
    let mut weighted = 0.0;
    for k in 0..aux.y.len() {
        if k > 0 {
            weighted = b * weighted + traj.gradients[k - 1].norm_sq();
        }
        lhs.push(dist_sq(&aux.y[k], &traj.iterates[k]));
        identity_rhs.push(k2 * momenta[k].norm_sq());
        bound_rhs.push(k2 / c * weighted);
    }
    let max_relative_residual = lhs
        .iter()
        .zip(&identity_rhs)
        .map(|(a, b)| relative_gap(*a, *b))
        .fold(0.0, f64::max);
    let min_bound_margin = bound_rhs
        .iter()
        .zip(&lhs)
        .map(|(r, l)| r - l)
        .fold(f64::INFINITY, f64::min);
    DistanceCheck {
        passed: max_relative_residual <= 1e-10 && min_bound_margin >= -1e-10,
        lhs,
        identity_rhs,
        bound_rhs,
        max_relative_residual,
        min_bound_margin,
    }
}

/// The `δ` used in the stability proof and the constants it induces.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct DeltaChoice {
    pub delta: f64,
    /// `(1+δ)β²`
    pub decay: f64,
    /// `1 + 1/δ`
    pub factor: f64,
}

/// `δ = ½(1/β − 1)`; for `β = 0` the limit `δ → ∞` gives decay 0, factor 1.
pub fn proof_delta(beta: f64) -> DeltaChoice {
    if beta == 0.0 {
        return DeltaChoice {
            delta: f64::INFINITY,
            decay: 0.0,
            factor: 1.0,
        };
    }
    let delta = 0.5 * (1.0 / beta - 1.0);
    DeltaChoice {
        delta,
        decay: (1.0 + delta) * beta * beta,
        factor: 1.0 + 1.0 / delta,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MomentumRecursionCheck {
    pub delta: DeltaChoice,
    /// `‖m_t − m_t^{(i)}‖²` for `t = 1 … T`.
    pub lhs: Vec<f64>,
    /// `(1+1/δ) Σ_k ((1+δ)β²)^{t−k} ‖g_k − g_k^{(i)}‖²`
    pub rhs: Vec<f64>,
    pub min_margin: f64,
    pub passed: bool,
}

/// Momentum-difference bound along a coupled run.
pub fn verify_m_recursion_bound(trace: &CoupledTrace) -> MomentumRecursionCheck {
    let hp = &trace.base.hp;
    let choice = proof_delta(hp.beta);
    let dim = trace.base.iterates[0].len();
    let mut dm = vec![0.0; dim];
    let mut acc = 0.0;
    let mut lhs = Vec::with_capacity(trace.base.len());
    let mut rhs = Vec::with_capacity(trace.base.len());
    for (g, gn) in trace.base.gradients.iter().zip(&trace.neighbor.gradients) {
        let mut dg_sq = 0.0;
        for j in 0..dim {
            let dg = g[j] - gn[j];
            dm[j] = hp.beta * dm[j] + dg;
            dg_sq += dg * dg;
        }
        acc = choice.decay * acc + dg_sq;
        lhs.push(dm.iter().map(|v| v * v).sum());
        rhs.push(choice.factor * acc);
    }
    let min_margin = rhs
        .iter()
        .zip(&lhs)
        .map(|(r, l)| r - l)
        .fold(f64::INFINITY, f64::min);
    MomentumRecursionCheck {
        delta: choice,
        passed: min_margin >= -1e-10,
        lhs,
        rhs,
        min_margin,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseRegime {
    HighNoise,
    LowNoise,
}

/// Parameter choice `(t, ρ, step)` for the excess-risk corollaries, with
/// every `≍` taken as equality. `l_star_estimate` stands in for the
/// unobservable `L(w*)`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EprRecipe {
    pub regime: NoiseRegime,
    pub variant: Variant,
    pub t: usize,
    pub rho: f64,
    /// Step before clamping to the admissibility cap.
    pub raw_step: f64,
    /// `η` for heavy-ball, `γ` for Nesterov.
    pub step: f64,
    pub cap: Option<f64>,
    pub l_star_estimate: f64,
    pub estimate_based: bool,
}

/// `General` is treated like heavy-ball. `alpha`, when given, clamps the step
/// to the variant's stability cap.
pub fn epr_recipe(
    n: usize,
    beta: f64,
    l_star: f64,
    variant: Variant,
    alpha: Option<f64>,
) -> Result<EprRecipe> {
    if n == 0 {
        return Err(Error::InvalidArgument("n must be >= 1".into()));
    }
    if !(0.0..1.0).contains(&beta) {
        return Err(Error::InvalidArgument(format!("beta {beta} not in [0, 1)")));
    }
    if !(l_star >= 0.0) {
        return Err(Error::InvalidArgument(format!("L* estimate {l_star} must be >= 0")));
    }
    let nf = n as f64;
    let c = 1.0 - beta;
    let t = ((nf / c).round() as usize).max(1);
    let (regime, rho, raw_step) = if l_star >= 1.0 / nf {
        let root = (nf * l_star).sqrt();
        (NoiseRegime::HighNoise, root, c * c / root)
    } else {
        (NoiseRegime::LowNoise, 1.0, c * c)
    };
    let cap = match alpha {
        Some(a) if a > 0.0 => Some(match variant {
            Variant::Nesterov => max_gamma_nesterov(beta, a)?,
            Variant::Hb | Variant::General => max_eta_hb(beta, a)?,
        }),
        _ => None,
    };
    let step = cap.map_or(raw_step, |cap| raw_step.min(cap));
    Ok(EprRecipe {
        regime,
        variant,
        t,
        rho,
        raw_step,
        step,
        cap,
        l_star_estimate: l_star,
        estimate_based: true,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optimizer::{hb_params, nesterov_params, sgdm_step, SgdmState};

    fn hp(beta: f64, gamma: f64, eta: f64) -> HyperParams {
        HyperParams::new(beta, gamma, eta, 1).unwrap()
    }

    fn rel(a: f64, b: f64) -> f64 {
        relative_gap(a, b)
    }

    #[test]
    fn stab_condition_hand_values() {
        let r = check_stab_condition(&hp(0.5, 0.01, 0.02), 1.0);
        assert!((r.lhs - 0.365).abs() < 1e-15);
        assert!(r.satisfied);
        assert!((r.slack - 0.635).abs() < 1e-15);
        // β = 0 reads 3η + 1.5γ ≤ 1/α
        let r = check_stab_condition(&hp(0.0, 0.2, 0.1), 2.0);
        assert!((r.lhs - (0.3 + 0.3)).abs() < 1e-15);
        assert_eq!(r.rhs, 0.5);
        assert!(!r.satisfied);
        let r = check_stab_condition(&hp(0.9, 1.0, 1.0), 0.0);
        assert!(r.satisfied);
        assert_eq!(r.slack, f64::INFINITY);
    }

    #[test]
    fn opt_condition_hand_values() {
        let r = check_opt_condition(&hp(0.0, 0.0, 0.1), 1.0);
        assert!((r.lhs - 0.01).abs() < 1e-16);
        assert!((r.rhs - 0.2 / 3.0).abs() < 1e-16);
        assert!(r.satisfied);
        let tiny = check_opt_condition(&hp(0.7, 1e-9, 1e-9), 10.0);
        assert!(tiny.satisfied);
        for beta in [0.0, 0.3, 0.9, 0.99] {
            let alpha = 2.5;
            let eta = max_eta_hb_opt(beta, alpha).unwrap();
            assert!((eta - 2.0 * (1.0 - beta).powi(2) / (3.0 * alpha * (1.0 + beta))).abs() < 1e-18);
            let r = check_opt_condition(&hp(beta, 0.0, eta), alpha);
            assert!(rel(r.lhs, r.rhs) <= 1e-12, "beta={beta}: {} vs {}", r.lhs, r.rhs);
        }
    }

    #[test]
    fn caps() {
        assert!((max_eta_hb(0.0, 1.0).unwrap() - 1.0 / 3.0).abs() < 1e-16);
        assert!((max_eta_hb(0.9, 1.0).unwrap() - 0.01 / 3.99).abs() < 1e-16);
        assert!((max_eta_hb(0.9, 1.0).unwrap() - 2.5063e-3).abs() < 1e-7);
        assert!((max_eta_hb(0.3, 2.0).unwrap() * 2.0 - max_eta_hb(0.3, 1.0).unwrap()).abs() < 1e-16);
        assert!((max_gamma_nesterov(0.0, 1.0).unwrap() - 2.0 / 3.0).abs() < 1e-16);
        assert!((max_gamma_nesterov(0.5, 1.0).unwrap() - 0.5 / 7.0).abs() < 1e-16);
        assert!(max_eta_hb(0.5, 0.0).is_err());
        assert!(max_gamma_nesterov(0.5, -1.0).is_err());
    }

    #[test]
    fn caps_satisfy_their_conditions() {
        for beta in [0.0, 0.2, 0.5, 0.9, 0.99] {
            let alpha = 1.7;
            let eta = max_eta_hb(beta, alpha).unwrap();
            let r = check_stab_condition(&hp(beta, 0.0, eta), alpha);
            assert!(rel(r.lhs, r.rhs) < 1e-12);
            assert!(check_opt_condition(&hp(beta, 0.0, eta), alpha).satisfied);
            if beta > 0.0 {
                let g = max_gamma_nesterov(beta, alpha).unwrap();
                let p = nesterov_params(g, beta, 1).unwrap();
                let r = check_stab_condition(&p, alpha);
                assert!(rel(r.lhs, r.rhs) < 1e-12, "beta={beta}");
                assert!(check_opt_condition(&p, alpha).satisfied, "beta={beta}");
            }
        }
    }

    #[test]
    fn stability_bound_sgd_case() {
        let p = hb_params(0.1, 0.0, 1).unwrap();
        let r = stability_bound(&p, 1.0, 100, 100, 50.0, Variant::Hb);
        assert!((r.value - 0.12 * E).abs() < 1e-14);
        assert!((r.value - 0.32619).abs() < 1e-5);
        // (2 + t/n)·8αeη²/n·Σ
        let (n, t, alpha, eta, s) = (37.0, 90.0, 2.3, 0.05, 4.0);
        let p = hb_params(eta, 0.0, 1).unwrap();
        let r = stability_bound(&p, alpha, 37, 90, s, Variant::Hb);
        let want = (2.0 + t / n) * 8.0 * alpha * E * eta * eta / n * s;
        assert!(rel(r.value, want) < 1e-14);
        assert_eq!(stability_bound(&p, alpha, 37, 90, 0.0, Variant::Hb).value, 0.0);
        assert_eq!(r.inputs["e"], E);
    }

    #[test]
    fn optimization_bound_hand_value() {
        let p = hb_params(0.1, 0.0, 1).unwrap();
        let r = optimization_bound(&p, 1.0, 1.0, 100, 0.2, Variant::General);
        assert!((r.value - 0.21).abs() < 1e-15);
        let r2 = optimization_bound(&p, 1.0, 1.0, 200, 0.2, Variant::General);
        assert!((r2.value - (0.075 + 0.06)).abs() < 1e-15);
        let r0 = optimization_bound(&p, 1.0, 1.0, 1_000_000_000_000, 0.0, Variant::General);
        assert!(r0.value < 1e-8);
    }

    #[test]
    fn specializations_agree_with_general() {
        for beta in [0.0, 0.3, 0.8, 0.95] {
            let p = hb_params(0.013, beta, 1).unwrap();
            let a = stability_bound(&p, 1.3, 120, 700, 33.0, Variant::Hb);
            let b = stability_bound(&p, 1.3, 120, 700, 33.0, Variant::General);
            assert!(rel(a.value, b.value) < 1e-12);
            let a = optimization_bound(&p, 1.3, 2.0, 700, 0.1, Variant::Hb);
            let b = optimization_bound(&p, 1.3, 2.0, 700, 0.1, Variant::General);
            assert!(rel(a.value, b.value) < 1e-12);
            if beta > 0.0 {
                let p = nesterov_params(0.02, beta, 1).unwrap();
                let a = stability_bound(&p, 1.3, 120, 700, 33.0, Variant::Nesterov);
                let b = stability_bound(&p, 1.3, 120, 700, 33.0, Variant::General);
                assert!(rel(a.value, b.value) < 1e-12);
                let a = optimization_bound(&p, 1.3, 2.0, 700, 0.1, Variant::Nesterov);
                let b = optimization_bound(&p, 1.3, 2.0, 700, 0.1, Variant::General);
                assert!(rel(a.value, b.value) < 1e-12);
            }
        }
    }

    #[test]
    fn advisory_flag() {
        let p = hb_params(1.0, 0.5, 1).unwrap();
        assert!(stability_bound(&p, 1.0, 10, 10, 1.0, Variant::Hb).advisory);
        let p = hb_params(1e-4, 0.5, 1).unwrap();
        assert!(!stability_bound(&p, 1.0, 10, 10, 1.0, Variant::Hb).advisory);
    }

    fn derived_trajectory() -> Trajectory {
        let p = HyperParams::new(0.5, 0.1, 0.2, 1).unwrap();
        let w1: WeightVector = vec![1.0, 0.0].into();
        let g1: WeightVector = vec![2.0, -1.0].into();
        let s = sgdm_step(SgdmState::new(w1.clone()), &g1, &p).unwrap();
        Trajectory {
            iterates: vec![w1, s.w],
            gradients: vec![g1],
            indices: vec![1],
            risks: None,
            risk_stride: 1,
            hp: p,
        }
    }

    #[test]
    fn auxiliary_sequence_hand_values() {
        let traj = derived_trajectory();
        let aux = auxiliary_sequence(&traj);
        assert_eq!(aux.y[0], traj.iterates[0]);
        assert!((aux.y[1][0] - 0.0).abs() < 1e-15);
        assert!((aux.y[1][1] - 0.5).abs() < 1e-15);
        assert!((aux.effective_step - 0.5).abs() < 1e-16);
        let check = verify_y_identity(&aux, &traj);
        assert!(check.max_residual <= 1e-15);
        let dist = verify_dist_identity(&aux, &traj);
        assert_eq!((dist.lhs[0], dist.identity_rhs[0]), (0.0, 0.0));
        assert!((dist.lhs[1] - 0.2).abs() < 1e-15);
        assert!((dist.identity_rhs[1] - 0.2).abs() < 1e-15);
        assert!(dist.passed);
    }

    #[test]
    fn wrong_effective_step_is_caught() {
        let traj = derived_trajectory();
        let mut aux = auxiliary_sequence(&traj);
        aux.effective_step *= 1.01;
        assert!(!verify_y_identity(&aux, &traj).passed);
    }

    #[test]
    fn beta_zero_aux_equals_iterates() {
        let p = HyperParams::new(0.0, 0.1, 0.2, 1).unwrap();
        let w1: WeightVector = vec![0.5, -0.5].into();
        let g: WeightVector = vec![1.0, 3.0].into();
        let s = sgdm_step(SgdmState::new(w1.clone()), &g, &p).unwrap();
        let traj = Trajectory {
            iterates: vec![w1, s.w],
            gradients: vec![g],
            indices: vec![1],
            risks: None,
            risk_stride: 1,
            hp: p,
        };
        let aux = auxiliary_sequence(&traj);
        assert_eq!(aux.y, traj.iterates);
        let dist = verify_dist_identity(&aux, &traj);
        assert!(dist.lhs.iter().chain(&dist.identity_rhs).all(|&v| v == 0.0));
    }

    #[test]
    fn delta_recipe() {
        let d = proof_delta(0.5);
        assert!((d.delta - 0.5).abs() < 1e-16);
        assert!((d.decay - 0.375).abs() < 1e-16);
        assert!((d.factor - 3.0).abs() < 1e-15);
        // (1+δ)β = (1+β)/2 and 1 + 1/δ = (1+β)/(1−β)
        for beta in [0.1, 0.5, 0.9, 0.99] {
            let d = proof_delta(beta);
            assert!(rel((1.0 + d.delta) * beta, (1.0 + beta) / 2.0) < 1e-14);
            assert!(rel(d.factor, (1.0 + beta) / (1.0 - beta)) < 1e-12);
        }
    }

    #[test]
    fn recipes() {
        let r = epr_recipe(10_000, 0.9, 0.01, Variant::Hb, None).unwrap();
        assert_eq!(r.regime, NoiseRegime::HighNoise);
        assert_eq!(r.t, 100_000);
        assert!((r.rho - 10.0).abs() < 1e-12);
        assert!((r.raw_step - 1e-3).abs() < 1e-15);
        assert_eq!(r.step, r.raw_step);
        let low = epr_recipe(100, 0.5, 0.0, Variant::Nesterov, None).unwrap();
        assert_eq!(low.regime, NoiseRegime::LowNoise);
        assert_eq!(low.rho, 1.0);
        assert_eq!(low.raw_step, 0.25);
        let edge = epr_recipe(100, 0.5, 0.01, Variant::Hb, None).unwrap();
        assert_eq!(edge.regime, NoiseRegime::HighNoise);
        let clamped = epr_recipe(100, 0.5, 0.0, Variant::Hb, Some(10.0)).unwrap();
        assert_eq!(clamped.step, max_eta_hb(0.5, 10.0).unwrap());
        assert!(clamped.step < clamped.raw_step);
        assert!(epr_recipe(0, 0.5, 0.0, Variant::Hb, None).is_err());
    }

    #[test]
    fn report_json_inlines_inputs() {
        let p = hb_params(0.1, 0.0, 1).unwrap();
        let r = stability_bound(&p, 1.0, 100, 100, 50.0, Variant::Hb);
        let v: serde_json::Value = serde_json::to_value(&r).unwrap();
        assert_eq!(v["formula"], "stab_hb");
        assert_eq!(v["n"], 100.0);
        assert_eq!(v["sum_risk"], 50.0);
        assert!(v.get("inputs").is_none());
    }
}
