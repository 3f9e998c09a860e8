//! Synthetic tables whose features are mutually predictive: every feature is
//! a random linear mix of a few shared Gaussian latent factors plus its own noise,
//! optionally squashed into a bounded range.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::table::{FeatureTable, TargetColumn};

/// Marginal shape of each generated feature.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Marginal {
    /// The raw linear mix; unbounded, so per-subset min/max vary with the sample.
    Gaussian,
    /// Logistic of the standardized mix. Sample extremes sit close to the
    /// bounds, so independently scaled subsets line up.
    #[default]
    Squashed,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatentFactorSpec {
    pub n_rows: usize,
    pub n_features: usize,
    pub n_latent: usize,
    /// Std of the per-feature idiosyncratic noise, relative to unit-variance factors.
    pub feature_noise: f64,
    pub marginal: Marginal,
    pub seed: u64,
}

impl Default for LatentFactorSpec {
    fn default() -> Self {
        Self {
            n_rows: 6_000,
            n_features: 12,
            n_latent: 4,
            feature_noise: 0.05,
            marginal: Marginal::Squashed,
            seed: 0,
        }
    }
}

/// Generates `x = W z + noise·e` with `z ~ N(0, I)`, loadings `W ~ N(0, 1)`.
/// With [`Marginal::Squashed`] each `x_j` is divided by its population std and
/// passed through `1 / (1 + exp(-1.702 x))`, a close logistic fit to the normal CDF.
///
/// Features are named `f00, f01, …`; a `target` column holds the sum of the factors.
pub fn latent_factor_table(spec: &LatentFactorSpec) -> Result<FeatureTable> {
    if spec.n_features == 0 || spec.n_latent == 0 || spec.n_rows == 0 {
        return Err(Error::InvalidArgument(
            "synthetic table needs rows, features and factors".into(),
        ));
    }
    if !(spec.feature_noise >= 0.0) {
        return Err(Error::InvalidArgument(
            "feature_noise must be non-negative".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut normal = || -> f64 { StandardNormal.sample(&mut rng) };
    let loadings: Vec<f64> = (0..spec.n_features * spec.n_latent)
        .map(|_| normal())
        .collect();
    let scale: Vec<f64> = loadings
        .chunks(spec.n_latent)
        .map(|w| {
            (w.iter().map(|a| a * a).sum::<f64>() + spec.feature_noise * spec.feature_noise).sqrt()
        })
        .collect();

    let mut values = Vec::with_capacity(spec.n_rows * spec.n_features);
    let mut target = Vec::with_capacity(spec.n_rows);
    let mut z = vec![0.0; spec.n_latent];
    for _ in 0..spec.n_rows {
        for zl in z.iter_mut() {
            *zl = normal();
        }
        for j in 0..spec.n_features {
            let w = &loadings[j * spec.n_latent..(j + 1) * spec.n_latent];
            let signal: f64 = w.iter().zip(&z).map(|(a, b)| a * b).sum();
            let x = signal + spec.feature_noise * normal();
            values.push(match spec.marginal {
                Marginal::Gaussian => x,
                Marginal::Squashed if scale[j] > 0.0 => 1.0 / (1.0 + (-1.702 * x / scale[j]).exp()),
                Marginal::Squashed => 0.5,
            });
        }
        target.push(z.iter().sum());
    }
    let names = (0..spec.n_features).map(|j| format!("f{j:02}")).collect();
    FeatureTable::new(names, values, (0..spec.n_rows as u64).collect())?.with_target(TargetColumn {
        name: "target".into(),
        values: target,
    })
}
