//! Seeded additive Gaussian corruption of a single feature.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::table::FeatureTable;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    #[default]
    GaussianAdditive,
}

/// One corruption event: which feature, how much noise (in scaled units), which seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSpec {
    pub feature: String,
    pub sigma: f64,
    pub seed: u64,
    #[serde(default)]
    pub kind: NoiseKind,
    /// Clamp corrupted values to [0, 1]. Off by default: a drifting meter can read out of range.
    #[serde(default)]
    pub clip: bool,
}

impl NoiseSpec {
    pub fn new(feature: impl Into<String>, sigma: f64, seed: u64) -> Self {
        Self {
            feature: feature.into(),
            sigma,
            seed,
            kind: NoiseKind::GaussianAdditive,
            clip: false,
        }
    }
}

/// Draws `n` i.i.d. `Normal(0, sigma²)` values from a generator seeded with `seed`.
pub fn gaussian_draws(n: usize, sigma: f64, seed: u64) -> Result<Vec<f64>> {
    let normal = Normal::new(0.0, sigma)
        .map_err(|e| Error::InvalidArgument(format!("noise sigma {sigma}: {e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..n).map(|_| normal.sample(&mut rng)).collect())
}

/// Returns a copy of `table` whose `spec.feature` column is `x + ε`, `ε ~ N(0, σ²)`.
/// Every other column is untouched.
pub fn inject_gaussian(table: &FeatureTable, spec: &NoiseSpec) -> Result<FeatureTable> {
    let j = table.require_feature(&spec.feature)?;
    if !(spec.sigma >= 0.0) || !spec.sigma.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "noise sigma must be a finite non-negative number, got {}",
            spec.sigma
        )));
    }
    if spec.sigma == 0.0 {
        return Ok(table.clone());
    }
    let eps = gaussian_draws(table.n_rows(), spec.sigma, spec.seed)?;
    let column: Vec<f64> = table
        .column(j)
        .iter()
        .zip(&eps)
        .map(|(x, e)| {
            let v = x + e;
            if spec.clip {
                v.clamp(0.0, 1.0)
            } else {
                v
            }
        })
        .collect();
    table.with_column(j, &column)
}

/// Doubling sequence `min, 2·min, 4·min, …` up to and including `max`.
pub fn sigma_ladder(min_sigma: f64, max_sigma: f64) -> Result<Vec<f64>> {
    if !(min_sigma > 0.0) || !(max_sigma >= min_sigma) || !max_sigma.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "sigma ladder needs 0 < min <= max, got ({min_sigma}, {max_sigma})"
        )));
    }
    let mut out = Vec::new();
    let mut s = min_sigma;
    while s <= max_sigma * (1.0 + 1e-12) {
        out.push(s);
        s *= 2.0;
    }
    Ok(out)
}
