//! Recoverability: which noisy samples stand out from ordinary imputation
//! error, their kNN correction, and correction scoring (MAPE, R²).

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::detect::DeltaDistribution;
use crate::error::{Error, Result};
use crate::knn::NeighborIndex;
use crate::stats::percentile;
use crate::table::FeatureTable;

/// Clean values closer to zero than this are left out of MAPE.
pub const MAPE_EPSILON: f64 = 1e-8;

/// A corrected sample counts as accurate below this MAPE (percent).
pub const ACCURATE_MAPE: f64 = 20.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RecoverabilityCriterion {
    pub percentile: f64,
    pub on_absolute: bool,
}

impl Default for RecoverabilityCriterion {
    fn default() -> Self {
        Self {
            percentile: 95.0,
            on_absolute: true,
        }
    }
}

impl RecoverabilityCriterion {
    pub fn validate(&self) -> Result<()> {
        if !(self.percentile > 0.0 && self.percentile < 100.0) {
            return Err(Error::Config(format!(
                "criterion.percentile {} must lie strictly inside (0, 100)",
                self.percentile
            )));
        }
        Ok(())
    }

    fn magnitude(&self, d: f64) -> f64 {
        if self.on_absolute {
            d.abs()
        } else {
            d
        }
    }
}

/// The criterion's percentile of the baseline errors (absolute by default).
pub fn baseline_threshold(
    base: &DeltaDistribution,
    criterion: &RecoverabilityCriterion,
) -> Result<f64> {
    criterion.validate()?;
    let vals: Vec<f64> = base
        .deltas
        .iter()
        .map(|d| criterion.magnitude(*d))
        .collect();
    percentile(&vals, criterion.percentile)
}

/// Rows whose noisy error strictly exceeds `threshold`, and their share of all rows.
pub fn flag_recoverable(
    noise: &DeltaDistribution,
    threshold: f64,
    criterion: &RecoverabilityCriterion,
) -> (Vec<u64>, f64) {
    let ids: Vec<u64> = noise
        .deltas
        .iter()
        .zip(&noise.row_ids)
        .filter(|(d, _)| criterion.magnitude(**d) > threshold)
        .map(|(_, id)| *id)
        .collect();
    let ratio = if noise.n() == 0 {
        0.0
    } else {
        ids.len() as f64 / noise.n() as f64
    };
    (ids, ratio)
}

/// Re-imputes `feature` for the flagged rows of `noisy_test` from their other columns.
pub fn correct_samples(
    index: &NeighborIndex,
    noisy_test: &FeatureTable,
    feature: &str,
    ids: &[u64],
) -> Result<BTreeMap<u64, f64>> {
    if index.target_feature() != feature {
        return Err(Error::FeatureMismatch(format!(
            "index imputes `{}`, not `{feature}`",
            index.target_feature()
        )));
    }
    noisy_test.require_feature(feature)?;
    let positions: BTreeMap<u64, usize> = noisy_test
        .row_ids()
        .iter()
        .enumerate()
        .map(|(p, id)| (*id, p))
        .collect();
    let cols = index.input_columns(noisy_test)?;
    let mut out = BTreeMap::new();
    let mut q = Vec::with_capacity(cols.len());
    for id in ids {
        let p = *positions.get(id).ok_or(Error::UnknownRow(*id))?;
        q.clear();
        q.extend(cols.iter().map(|&j| noisy_test.value(p, j)));
        out.insert(*id, index.impute_one(&q)?);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapeSummary {
    pub per_sample: BTreeMap<u64, f64>,
    /// Mean over included rows; `None` if every row was excluded.
    pub aggregate: Option<f64>,
    /// Rows dropped because the clean value was within [`MAPE_EPSILON`] of zero.
    pub excluded: usize,
}

impl MapeSummary {
    /// Share of scored samples under [`ACCURATE_MAPE`]; `None` if nothing was scored.
    pub fn fraction_under(&self, limit: f64) -> Option<f64> {
        if self.per_sample.is_empty() {
            return None;
        }
        let n = self.per_sample.values().filter(|m| **m < limit).count();
        Some(n as f64 / self.per_sample.len() as f64)
    }
}

/// Per-sample `100·|corrected − clean| / |clean|` and its mean.
pub fn mape(corrected: &BTreeMap<u64, f64>, clean: &BTreeMap<u64, f64>) -> Result<MapeSummary> {
    if corrected.len() != clean.len() || corrected.keys().zip(clean.keys()).any(|(a, b)| a != b) {
        return Err(Error::FeatureMismatch(
            "corrected and clean cover different rows".into(),
        ));
    }
    let mut per_sample = BTreeMap::new();
    let mut excluded = 0;
    for ((id, c_hat), c) in corrected.iter().zip(clean.values()) {
        if c.abs() < MAPE_EPSILON {
            excluded += 1;
            continue;
        }
        per_sample.insert(*id, 100.0 * (c_hat - c).abs() / c.abs());
    }
    let aggregate = (!per_sample.is_empty())
        .then(|| per_sample.values().sum::<f64>() / per_sample.len() as f64);
    Ok(MapeSummary {
        per_sample,
        aggregate,
        excluded,
    })
}

/// Coefficient of determination `1 − SS_res / SS_tot`.
pub fn r2(predicted: &[f64], actual: &[f64]) -> Result<f64> {
    if actual.is_empty() {
        return Err(Error::Empty("r2 of empty vectors"));
    }
    if predicted.len() != actual.len() {
        return Err(Error::DimensionMismatch {
            expected: actual.len(),
            got: predicted.len(),
        });
    }
    let m = crate::stats::mean(actual);
    let ss_tot: f64 = actual.iter().map(|a| (a - m) * (a - m)).sum();
    if ss_tot == 0.0 {
        return Err(Error::Undefined("r2 with constant actual values".into()));
    }
    let ss_res: f64 = predicted
        .iter()
        .zip(actual)
        .map(|(p, a)| (a - p) * (a - p))
        .sum();
    Ok(1.0 - ss_res / ss_tot)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryReport {
    pub feature: String,
    pub sigma: f64,
    pub threshold: f64,
    pub recoverability: f64,
    pub n_test: usize,
    pub n_recoverable: usize,
    pub n_mape_excluded: usize,
    pub aggregate_mape: Option<f64>,
    pub fraction_under_20pct: Option<f64>,
    #[serde(skip)]
    pub recoverable_ids: Vec<u64>,
    #[serde(skip)]
    pub per_sample_mape: BTreeMap<u64, f64>,
}

/// One row of the optional per-sample CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub row_id: u64,
    pub clean: f64,
    pub noisy: f64,
    pub corrected: f64,
    pub mape: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecoveryOutcome {
    pub report: RecoveryReport,
    pub samples: Vec<SampleRecord>,
}

/// Runs the whole recovery step for one corrupted feature: threshold from the
/// baseline, flag recoverable rows, correct them and score against the clean values.
pub fn recover_feature(
    index: &NeighborIndex,
    base: &DeltaDistribution,
    noise: &DeltaDistribution,
    clean_test: &FeatureTable,
    noisy_test: &FeatureTable,
    sigma: f64,
    criterion: &RecoverabilityCriterion,
) -> Result<RecoveryOutcome> {
    let feature = index.target_feature();
    let j = clean_test.require_feature(feature)?;
    let threshold = baseline_threshold(base, criterion)?;
    let (ids, recoverability) = flag_recoverable(noise, threshold, criterion);
    let corrected = correct_samples(index, noisy_test, feature, &ids)?;

    let lookup = |t: &FeatureTable, id: u64| -> Result<f64> {
        let p = t.row_position(id).ok_or(Error::UnknownRow(id))?;
        Ok(t.value(p, j))
    };
    let clean: BTreeMap<u64, f64> = ids
        .iter()
        .map(|&id| Ok((id, lookup(clean_test, id)?)))
        .collect::<Result<_>>()?;
    let scored = mape(&corrected, &clean)?;

    let samples = ids
        .iter()
        .map(|&id| {
            Ok(SampleRecord {
                row_id: id,
                clean: clean[&id],
                noisy: lookup(noisy_test, id)?,
                corrected: corrected[&id],
                mape: scored.per_sample.get(&id).copied(),
            })
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(RecoveryOutcome {
        report: RecoveryReport {
            feature: feature.to_owned(),
            sigma,
            threshold,
            recoverability,
            n_test: noise.n(),
            n_recoverable: ids.len(),
            n_mape_excluded: scored.excluded,
            aggregate_mape: scored.aggregate,
            fraction_under_20pct: scored.fraction_under(ACCURATE_MAPE),
            recoverable_ids: ids,
            per_sample_mape: scored.per_sample,
        },
        samples,
    })
}

/// Writes the per-sample CSV (`row_id, clean, noisy, corrected, mape`).
pub fn write_samples_csv<W: std::io::Write>(samples: &[SampleRecord], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for s in samples {
        w.serialize(s)?;
    }
    w.flush().map_err(|e| Error::io("<csv writer>", e))?;
    Ok(())
}
