//! Per-example loss oracles for linear models: value, gradient and
//! smoothness constant, plus the empirical risk `L_S(w)`.

use std::fmt;
use std::ops::{Deref, DerefMut};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, Example, SparseVector};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    /// `log(1 + exp(−y⟨w, x⟩))`
    Logistic,
    /// `½(⟨w, x⟩ − y)²`
    Squared,
}

impl LossKind {
    pub const ALL: [LossKind; 2] = [LossKind::Logistic, LossKind::Squared];

    pub fn as_str(self) -> &'static str {
        match self {
            LossKind::Logistic => "logistic",
            LossKind::Squared => "squared",
        }
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "logistic" => Ok(LossKind::Logistic),
            "squared" => Ok(LossKind::Squared),
            other => Err(Error::InvalidArgument(format!(
                "unknown loss `{other}` (expected logistic | squared)"
            ))),
        }
    }
}

/// Dense model parameters `w ∈ R^d`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct WeightVector(Vec<f64>);

impl WeightVector {
    pub fn zeros(dim: usize) -> Self {
        Self(vec![0.0; dim])
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    pub fn norm_sq(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    pub fn dist_sq(&self, other: &[f64]) -> f64 {
        dist_sq(&self.0, other)
    }

    pub fn dot(&self, other: &[f64]) -> f64 {
        self.0.iter().zip(other).map(|(a, b)| a * b).sum()
    }

    /// `self += scale · x`
    pub fn axpy(&mut self, scale: f64, x: &[f64]) {
        for (a, b) in self.0.iter_mut().zip(x) {
            *a += scale * b;
        }
    }
}

pub fn dist_sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

impl From<Vec<f64>> for WeightVector {
    fn from(v: Vec<f64>) -> Self {
        Self(v)
    }
}

impl Deref for WeightVector {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl DerefMut for WeightVector {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

/// `log(1 + e^z)` without overflow for large `|z|`.
pub fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

/// Logistic sigmoid `1 / (1 + e^{−z})`, branch-stable in the sign of `z`.
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn check_dim(w: &[f64], x: &SparseVector) -> Result<()> {
    let need = x.max_index();
    if w.len() < need {
        return Err(Error::DimensionMismatch {
            expected: need,
            got: w.len(),
        });
    }
    Ok(())
}

fn value_at_margin(margin: f64, y: f64, kind: LossKind) -> f64 {
    match kind {
        LossKind::Logistic => softplus(-y * margin),
        LossKind::Squared => 0.5 * (margin - y) * (margin - y),
    }
}

/// `c` such that `∇ℓ(w; z) = c · x` at the given margin `⟨w, x⟩`.
pub(crate) fn grad_scale_at_margin(margin: f64, y: f64, kind: LossKind) -> f64 {
    match kind {
        LossKind::Logistic => -y * sigmoid(-y * margin),
        LossKind::Squared => margin - y,
    }
}

pub fn loss_value(w: &[f64], z: &Example, kind: LossKind) -> Result<f64> {
    check_dim(w, &z.features)?;
    Ok(value_at_margin(z.features.dot(w), z.label, kind))
}

/// Scalar factor of the gradient, which is supported on `z.features`.
pub fn loss_grad_scale(w: &[f64], z: &Example, kind: LossKind) -> Result<f64> {
    check_dim(w, &z.features)?;
    Ok(grad_scale_at_margin(z.features.dot(w), z.label, kind))
}

pub fn loss_grad(w: &[f64], z: &Example, kind: LossKind) -> Result<WeightVector> {
    let c = loss_grad_scale(w, z, kind)?;
    let mut g = WeightVector::zeros(w.len());
    for &(i, v) in z.features.entries() {
        g[i - 1] = c * v;
    }
    Ok(g)
}

fn check_dataset_dim(w: &[f64], d: &Dataset) -> Result<()> {
    if w.len() < d.dim() {
        return Err(Error::DimensionMismatch {
            expected: d.dim(),
            got: w.len(),
        });
    }
    Ok(())
}

pub fn empirical_risk(w: &[f64], d: &Dataset, kind: LossKind) -> Result<f64> {
    check_dataset_dim(w, d)?;
    let total: f64 = d
        .examples()
        .iter()
        .map(|z| value_at_margin(z.features.dot(w), z.label, kind))
        .sum();
    Ok(total / d.n() as f64)
}

/// Full gradient `∇L_S(w)`.
pub fn empirical_gradient(w: &[f64], d: &Dataset, kind: LossKind) -> Result<WeightVector> {
    check_dataset_dim(w, d)?;
    let mut g = WeightVector::zeros(w.len());
    let inv_n = 1.0 / d.n() as f64;
    for z in d.examples() {
        let c = grad_scale_at_margin(z.features.dot(w), z.label, kind) * inv_n;
        for &(i, v) in z.features.entries() {
            g[i - 1] += c * v;
        }
    }
    Ok(g)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SmoothnessReport {
    /// Global constant, the maximum of `per_example`.
    pub alpha: f64,
    pub per_example: Vec<f64>,
}

impl SmoothnessReport {
    /// `1/α`, infinite for a constant loss.
    pub fn inverse_alpha(&self) -> f64 {
        if self.alpha == 0.0 {
            f64::INFINITY
        } else {
            1.0 / self.alpha
        }
    }
}

/// `‖x‖²/4` for logistic, `‖x‖²` for squared.
pub fn example_smoothness(z: &Example, kind: LossKind) -> f64 {
    let nsq = z.features.norm_sq();
    match kind {
        LossKind::Logistic => nsq / 4.0,
        LossKind::Squared => nsq,
    }
}

pub fn smoothness(d: &Dataset, kind: LossKind) -> SmoothnessReport {
    let per_example: Vec<f64> = d
        .examples()
        .iter()
        .map(|z| example_smoothness(z, kind))
        .collect();
    let alpha = per_example.iter().copied().fold(0.0, f64::max);
    SmoothnessReport { alpha, per_example }
}
