use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::rng::rng;
use super::scalar::Scalar;
use super::tensor::{numel, Tensor};

/// Weight initialization schemes.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum InitScheme {
    /// Uniform on `[-b, b]` with `b = sqrt(6 / fan_in)`.
    KaimingUniform { fan_in: usize },
    Normal { std: f64 },
    Zeros,
    Ones,
}

impl InitScheme {
    pub fn kaiming_bound(fan_in: usize) -> f64 {
        (6.0 / fan_in.max(1) as f64).sqrt()
    }
}

/// Deterministic tensor draw for `(shape, scheme, seed)`. Values are drawn in
/// `f64` and cast, so every scalar type sees the same underlying sample.
pub fn seeded_init<T: Scalar>(shape: &[usize], scheme: InitScheme, seed: u64) -> Tensor<T> {
    let n = numel(shape);
    let mut r = rng(seed);
    let data: Vec<T> = match scheme {
        InitScheme::Zeros => vec![T::zero(); n],
        InitScheme::Ones => vec![T::one(); n],
        InitScheme::KaimingUniform { fan_in } => {
            let b = InitScheme::kaiming_bound(fan_in);
            (0..n).map(|_| T::of(r.random_range(-b..=b))).collect()
        }
        InitScheme::Normal { std } => {
            let dist = Normal::new(0.0, std).expect("positive std");
            (0..n).map(|_| T::of(dist.sample(&mut r))).collect()
        }
    };
    Tensor::new(shape.to_vec(), data).expect("numel matches")
}
