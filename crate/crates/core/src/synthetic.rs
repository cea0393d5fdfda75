//! Deterministic synthetic datasets for experiments that have no local data.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::dataset::{Dataset, Example, SparseVector};
use crate::error::{Error, Result};
use crate::losses::sigmoid;

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Dense Gaussian features `x ~ N(0, I/d)` with ±1 labels drawn from a
/// logistic model around a random `w* ~ N(0, 4I)`.
pub fn gaussian_logistic(n: usize, d: usize, seed: u64) -> Result<Dataset> {
    if n == 0 || d == 0 {
        return Err(Error::InvalidArgument("n and d must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w_star: Vec<f64> = (0..d)
        .map(|_| 2.0 * normal(&mut rng))
        .collect();
    let scale = 1.0 / (d as f64).sqrt();
    let examples = (0..n)
        .map(|_| {
            let x: Vec<f64> = (0..d)
                .map(|_| scale * normal(&mut rng))
                .collect();
            let margin: f64 = x.iter().zip(&w_star).map(|(a, b)| a * b).sum();
            let y = if rng.random::<f64>() < sigmoid(margin) { 1.0 } else { -1.0 };
            Ok(Example::new(SparseVector::from_dense(&x)?, y))
        })
        .collect::<Result<Vec<_>>>()?;
    Dataset::new(examples, d)
}

/// One-hot encoded categorical data: attribute `a` takes one of
/// `cardinalities[a]` values, so every example has exactly one active
/// feature per attribute. Raw labels are `1` or `2` from a linear rule over
/// the categories plus Gaussian noise of standard deviation `noise`; with
/// `noise = 0` the data is linearly separable.
pub fn categorical(n: usize, cardinalities: &[usize], noise: f64, seed: u64) -> Result<Dataset> {
    if n == 0 || cardinalities.is_empty() || cardinalities.contains(&0) {
        return Err(Error::InvalidArgument(
            "need n > 0 and nonempty positive cardinalities".into(),
        ));
    }
    let dim: usize = cardinalities.iter().sum();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let weights: Vec<f64> = (0..dim)
        .map(|_| normal(&mut rng))
        .collect();
    let examples = (0..n)
        .map(|_| {
            let mut offset = 0;
            let mut entries = Vec::with_capacity(cardinalities.len());
            let mut score = 0.0;
            for &card in cardinalities {
                let j = offset + rng.random_range(0..card);
                entries.push((j + 1, 1.0));
                score += weights[j];
                offset += card;
            }
            let label = if score + noise * normal(&mut rng) > 0.0 { 1.0 } else { 2.0 };
            Ok(Example::new(SparseVector::new(entries, dim)?, label))
        })
        .collect::<Result<Vec<_>>>()?;
    Dataset::new(examples, dim)
}

/// 22 categorical attributes, 112 one-hot features (the mushrooms layout).
pub const MUSHROOMS_LIKE: [usize; 22] = [
    6, 4, 10, 2, 9, 2, 2, 2, 10, 2, 5, 4, 4, 8, 8, 1, 4, 3, 5, 9, 6, 6,
];

/// Layout with the shape of mushrooms: 8124 examples, 112 features,
/// linearly separable like the real file.
pub fn mushrooms_like(seed: u64) -> Result<Dataset> {
    debug_assert_eq!(MUSHROOMS_LIKE.iter().sum::<usize>(), 112);
    categorical(8124, &MUSHROOMS_LIKE, 0.0, seed)
}

/// Layout with the shape of a9a: 14 attributes, 123 one-hot features.
pub fn a9a_like(n: usize, seed: u64) -> Result<Dataset> {
    let cards = [5, 7, 16, 7, 14, 6, 5, 2, 41, 5, 5, 5, 3, 2];
    debug_assert_eq!(cards.iter().sum::<usize>(), 123);
    categorical(n, &cards, 0.5, seed)
}
