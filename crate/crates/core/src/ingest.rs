//! Correlation pruning, 8:1:1 splitting and per-subset min-max scaling.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::table::FeatureTable;

/// Symmetric feature-by-feature correlation matrix, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationMatrix {
    pub names: Vec<String>,
    values: Vec<f64>,
}

impl CorrelationMatrix {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.names.len() + j]
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    /// Mean of |r| between feature `i` and every other feature.
    pub fn mean_abs_off_diagonal(&self, i: usize) -> f64 {
        let d = self.len();
        if d < 2 {
            return 0.0;
        }
        let s: f64 = (0..d)
            .filter(|&j| j != i)
            .map(|j| self.get(i, j).abs())
            .sum();
        s / (d - 1) as f64
    }
}

/// Pearson correlation of every feature pair. Zero-variance columns correlate 0 with
/// everything else; the diagonal is always 1.
pub fn pearson_matrix(table: &FeatureTable) -> Result<CorrelationMatrix> {
    let n = table.n_rows();
    if n < 2 {
        return Err(Error::TooFewRows { needed: 2, got: n });
    }
    let d = table.n_features();
    let centered: Vec<Vec<f64>> = (0..d)
        .into_par_iter()
        .map(|j| {
            let col = table.column(j);
            let m = crate::stats::mean(&col);
            col.into_iter().map(|v| v - m).collect()
        })
        .collect();
    let norms: Vec<f64> = centered
        .iter()
        .map(|c| c.iter().map(|v| v * v).sum::<f64>().sqrt())
        .collect();

    let upper: Vec<Vec<f64>> = (0..d)
        .into_par_iter()
        .map(|i| {
            ((i + 1)..d)
                .map(|j| {
                    if norms[i] == 0.0 || norms[j] == 0.0 {
                        return 0.0;
                    }
                    let dot: f64 = centered[i]
                        .iter()
                        .zip(&centered[j])
                        .map(|(a, b)| a * b)
                        .sum();
                    (dot / (norms[i] * norms[j])).clamp(-1.0, 1.0)
                })
                .collect()
        })
        .collect();

    let mut values = vec![0.0; d * d];
    for i in 0..d {
        values[i * d + i] = 1.0;
        for (off, r) in upper[i].iter().enumerate() {
            let j = i + 1 + off;
            values[i * d + j] = *r;
            values[j * d + i] = *r;
        }
    }
    Ok(CorrelationMatrix {
        names: table.feature_names().to_vec(),
        values,
    })
}

/// A feature removed by [`prune_correlated`] and the retained feature that caused it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DroppedFeature {
    pub name: String,
    pub correlated_with: String,
    pub r: f64,
}

/// Greedy left-to-right pruning: a feature is dropped iff `|r| > threshold`
/// against some already-retained feature (the first such one is recorded).
pub fn prune_correlated(
    table: &FeatureTable,
    threshold: f64,
) -> Result<(FeatureTable, Vec<DroppedFeature>)> {
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "prune threshold {threshold} outside (0, 1]"
        )));
    }
    let corr = pearson_matrix(table)?;
    let mut kept: Vec<usize> = Vec::new();
    let mut dropped = Vec::new();
    for j in 0..table.n_features() {
        match kept.iter().find(|&&k| corr.get(j, k).abs() > threshold) {
            Some(&k) => dropped.push(DroppedFeature {
                name: corr.names[j].clone(),
                correlated_with: corr.names[k].clone(),
                r: corr.get(j, k),
            }),
            None => kept.push(j),
        }
    }
    let names: Vec<&str> = kept.iter().map(|&k| corr.names[k].as_str()).collect();
    Ok((table.select_features(&names)?, dropped))
}

#[derive(Debug, Clone, PartialEq)]
pub struct DataSplit {
    pub train: FeatureTable,
    pub validation: FeatureTable,
    pub test: FeatureTable,
    pub seed: u64,
}

/// Subset sizes for `n` rows: train and validation get `⌊r·n⌋`, test takes the rest.
pub fn split_sizes(n: usize, ratios: [f64; 3]) -> Result<[usize; 3]> {
    if ratios.iter().any(|r| !(*r > 0.0)) || (ratios.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidArgument(format!(
            "split ratios {ratios:?} must be positive and sum to 1"
        )));
    }
    // The epsilon keeps e.g. 0.29 * 100 from flooring to 28.
    let floor = |r: f64| (r * n as f64 + 1e-9).floor() as usize;
    let train = floor(ratios[0]);
    let validation = floor(ratios[1]);
    let test = n.saturating_sub(train + validation);
    if train == 0 || validation == 0 || test == 0 {
        return Err(Error::TooFewRows { needed: 3, got: n });
    }
    Ok([train, validation, test])
}

/// Shuffles rows with a seeded permutation and partitions them train/validation/test.
pub fn split_dataset(table: &FeatureTable, ratios: [f64; 3], seed: u64) -> Result<DataSplit> {
    let [n_train, n_val, _] = split_sizes(table.n_rows(), ratios)?;
    let mut order: Vec<usize> = (0..table.n_rows()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (train, rest) = order.split_at(n_train);
    let (validation, test) = rest.split_at(n_val);
    Ok(DataSplit {
        train: table.select_rows(train),
        validation: table.select_rows(validation),
        test: table.select_rows(test),
        seed,
    })
}

/// Per-feature min/max fitted by [`minmax_scale`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalerParams {
    pub feature_names: Vec<String>,
    pub per_feature_min: Vec<f64>,
    pub per_feature_max: Vec<f64>,
}

impl ScalerParams {
    pub fn fit(table: &FeatureTable) -> Result<Self> {
        if table.n_rows() == 0 {
            return Err(Error::Empty("cannot scale an empty table"));
        }
        let d = table.n_features();
        let mut lo = vec![f64::INFINITY; d];
        let mut hi = vec![f64::NEG_INFINITY; d];
        for row in table.rows() {
            for (j, v) in row.iter().enumerate() {
                lo[j] = lo[j].min(*v);
                hi[j] = hi[j].max(*v);
            }
        }
        Ok(Self {
            feature_names: table.feature_names().to_vec(),
            per_feature_min: lo,
            per_feature_max: hi,
        })
    }

    fn check(&self, table: &FeatureTable) -> Result<()> {
        if table.feature_names() != self.feature_names.as_slice() {
            return Err(Error::FeatureMismatch(
                "scaler was fitted on different features".into(),
            ));
        }
        Ok(())
    }

    /// `(x − min) / (max − min)`; degenerate features map to 0.
    pub fn transform(&self, table: &FeatureTable) -> Result<FeatureTable> {
        self.check(table)?;
        Ok(table.map_values(|j, v| {
            let span = self.per_feature_max[j] - self.per_feature_min[j];
            if span > 0.0 {
                (v - self.per_feature_min[j]) / span
            } else {
                0.0
            }
        }))
    }

    /// Undoes [`transform`](Self::transform); degenerate features come back as their constant.
    pub fn inverse_transform(&self, table: &FeatureTable) -> Result<FeatureTable> {
        self.check(table)?;
        Ok(table.map_values(|j, v| {
            let span = self.per_feature_max[j] - self.per_feature_min[j];
            self.per_feature_min[j] + v * span
        }))
    }
}

/// Fits min-max parameters on `table` and applies them to the same table.
pub fn minmax_scale(table: &FeatureTable) -> Result<(FeatureTable, ScalerParams)> {
    let params = ScalerParams::fit(table)?;
    Ok((params.transform(table)?, params))
}

/// A split whose subsets were each scaled with their own parameters.
#[derive(Debug, Clone)]
pub struct ScaledSplit {
    pub split: DataSplit,
    pub scalers: [ScalerParams; 3],
}

pub fn scale_split(split: DataSplit) -> Result<ScaledSplit> {
    let (train, s_train) = minmax_scale(&split.train)?;
    let (validation, s_val) = minmax_scale(&split.validation)?;
    let (test, s_test) = minmax_scale(&split.test)?;
    Ok(ScaledSplit {
        split: DataSplit {
            train,
            validation,
            test,
            seed: split.seed,
        },
        scalers: [s_train, s_val, s_test],
    })
}
