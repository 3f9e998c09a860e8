use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::report::{write_file, Cell, ExperimentKind, SweepReport};
use super::{seeds, Experiment, Replicate};
use crate::detect::{
    compute_delta, compute_deltas, detect_noisy_feature, detectability_rate, DeltaDistribution,
    DeltaSource, DetectionReport,
};
use crate::error::{Error, Result};
use crate::ingest::pearson_matrix;
use crate::knn::IndexSet;
use crate::noise::{inject_gaussian, NoiseKind, NoiseSpec};
use crate::recover::{
    baseline_threshold, flag_recoverable, r2, recover_feature, SampleRecord, ACCURATE_MAPE,
};
use crate::stats::{mean, pearson, sample_std};

/// One feature's mean |r| against the others next to its R² at the smallest train size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationPoint {
    pub feature: String,
    pub mean_abs_correlation: f64,
    pub r2_at_min_size: Option<f64>,
}

/// A detection trial: the report plus the grid point it came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionTrial {
    pub sigma: f64,
    pub train_size: usize,
    pub seed: u64,
    pub report: DetectionReport,
}

pub struct DetectionRun {
    pub report: SweepReport,
    pub trials: Vec<DetectionTrial>,
}

/// Corrected samples of one (feature, seed) cell.
#[derive(Debug, Clone, PartialEq)]
pub struct CellSamples {
    pub feature: String,
    pub seed: u64,
    pub samples: Vec<SampleRecord>,
}

pub struct CorrectionRun {
    pub report: SweepReport,
    pub samples: Vec<CellSamples>,
}

impl CorrectionRun {
    /// Per-sample CSV: `feature, seed, row_id, clean, noisy, corrected, mape`.
    pub fn write_samples_csv(&self, path: &Path) -> Result<()> {
        #[derive(Serialize)]
        struct Row<'a> {
            feature: &'a str,
            seed: u64,
            row_id: u64,
            clean: f64,
            noisy: f64,
            corrected: f64,
            mape: Option<f64>,
        }
        let mut w = csv::Writer::from_writer(Vec::new());
        for cell in &self.samples {
            for s in &cell.samples {
                w.serialize(Row {
                    feature: &cell.feature,
                    seed: cell.seed,
                    row_id: s.row_id,
                    clean: s.clean,
                    noisy: s.noisy,
                    corrected: s.corrected,
                    mape: s.mape,
                })?;
            }
        }
        let bytes = w
            .into_inner()
            .map_err(|e| Error::io(path, e.into_error()))?;
        write_file(path, &bytes)
    }
}

/// Groups cells by everything but the seed and reports mean/std of `metric`.
fn across_seeds(cells: &[Cell], metric: &str, features: &[String]) -> Vec<Cell> {
    type Key = (Option<usize>, Option<u64>, Option<usize>);
    let mut groups: BTreeMap<Key, (Cell, Vec<f64>)> = BTreeMap::new();
    for c in cells {
        let pos = c
            .feature
            .as_ref()
            .and_then(|f| features.iter().position(|x| x == f));
        let key = (pos, c.sigma.map(f64::to_bits), c.train_size);
        let entry = groups.entry(key).or_insert_with(|| {
            (
                Cell {
                    feature: c.feature.clone(),
                    sigma: c.sigma,
                    train_size: c.train_size,
                    ..Default::default()
                },
                Vec::new(),
            )
        });
        if let Some(v) = c.metric(metric) {
            entry.1.push(v);
        }
    }
    groups
        .into_values()
        .map(|(tmpl, vals)| {
            let n = vals.len() as f64;
            if vals.is_empty() {
                return tmpl.with("n_seeds", 0.0);
            }
            tmpl.with(&format!("mean_{metric}"), mean(&vals))
                .with(&format!("std_{metric}"), sample_std(&vals))
                .with("n_seeds", n)
        })
        .collect()
}

impl Experiment {
    fn noise_spec(&self, feature: &str, sigma: f64, size: usize, replicate: u64) -> NoiseSpec {
        NoiseSpec {
            feature: feature.to_owned(),
            sigma,
            seed: seeds::noise_seed(self.config.master_seed, feature, sigma, size, replicate),
            kind: NoiseKind::GaussianAdditive,
            clip: self.config.clip_noise,
        }
    }

    fn baseline_cells(&self, sizes: &[usize]) -> Result<Vec<Cell>> {
        let mut cells = Vec::new();
        for &seed in &self.config.seeds {
            let rep = self.replicate(seed)?;
            let validation = &rep.data.split.validation;
            for &size in sizes {
                let set = IndexSet::build(&rep.train_subset(size), self.config.knn)?;
                let batch = set
                    .indices()
                    .par_iter()
                    .map(|idx| {
                        let j = validation.require_feature(idx.target_feature())?;
                        let predicted = idx.impute_table(validation)?;
                        let fit = match r2(&predicted, &validation.column(j)) {
                            Ok(v) => Some(v),
                            Err(Error::Undefined(_)) => None,
                            Err(e) => return Err(e),
                        };
                        Ok(Cell {
                            feature: Some(idx.target_feature().to_owned()),
                            train_size: Some(size),
                            seed: Some(seed),
                            ..Default::default()
                        }
                        .with_opt("r2", fit))
                    })
                    .collect::<Result<Vec<_>>>()?;
                cells.extend(batch);
            }
        }
        Ok(cells)
    }

    /// R² of imputing each feature on the validation set, for every (feature, train size, seed).
    pub fn run_baseline_eval(&self) -> Result<SweepReport> {
        let sizes = self.train_sizes()?;
        let cells = self.install(|| self.baseline_cells(&sizes))?;
        let summaries = across_seeds(&cells, "r2", self.feature_names());
        Ok(SweepReport::new(
            ExperimentKind::Baseline,
            &self.config,
            self.feature_names().to_vec(),
            cells,
            summaries,
        ))
    }

    /// Mean |r| per feature (on each replicate's train split) against R² at the smallest train size.
    pub fn correlation_vs_r2(&self) -> Result<Vec<CorrelationPoint>> {
        let min = self.train_sizes()?[0];
        let cells = self.install(|| self.baseline_cells(&[min]))?;
        Ok(points_from(
            &self.correlation_cells(&cells, min)?,
            self.feature_names(),
        ))
    }

    /// Correlation report built from an existing baseline report's smallest train size.
    pub fn correlation_from_baseline(&self, baseline: &SweepReport) -> Result<SweepReport> {
        let min = baseline
            .cells
            .iter()
            .filter_map(|c| c.train_size)
            .min()
            .ok_or(Error::Empty("baseline report has no cells"))?;
        let cells = self.correlation_cells(&baseline.cells, min)?;
        let points = points_from(&cells, self.feature_names());
        let mut summaries = across_seeds(&cells, "mean_abs_correlation", self.feature_names());
        let r2s = across_seeds(&cells, "r2_at_min_size", self.feature_names());
        for (s, r) in summaries.iter_mut().zip(r2s) {
            s.metrics
                .extend(r.metrics.into_iter().filter(|(k, _)| k != "n_seeds"));
        }
        let paired: Vec<(f64, f64)> = points
            .iter()
            .filter_map(|p| p.r2_at_min_size.map(|r| (p.mean_abs_correlation, r)))
            .collect();
        let (xs, ys): (Vec<f64>, Vec<f64>) = paired.into_iter().unzip();
        let overall = Cell {
            train_size: Some(min),
            ..Default::default()
        }
        .with("n_features", xs.len() as f64);
        let overall = if xs.len() >= 2 {
            overall.with("association", pearson(&xs, &ys))
        } else {
            overall
        };
        summaries.push(overall);
        Ok(SweepReport::new(
            ExperimentKind::Correlation,
            &self.config,
            self.feature_names().to_vec(),
            cells,
            summaries,
        ))
    }

    fn correlation_cells(&self, baseline_cells: &[Cell], min: usize) -> Result<Vec<Cell>> {
        let mut cells = Vec::new();
        for &seed in &self.config.seeds {
            let rep = self.replicate(seed)?;
            let corr = pearson_matrix(&rep.data.split.train)?;
            for (i, name) in corr.names.iter().enumerate() {
                let fit = baseline_cells
                    .iter()
                    .find(|c| {
                        c.seed == Some(seed)
                            && c.train_size == Some(min)
                            && c.feature.as_deref() == Some(name)
                    })
                    .and_then(|c| c.metric("r2"));
                cells.push(
                    Cell {
                        feature: Some(name.clone()),
                        train_size: Some(min),
                        seed: Some(seed),
                        ..Default::default()
                    }
                    .with("mean_abs_correlation", corr.mean_abs_off_diagonal(i))
                    .with_opt("r2_at_min_size", fit),
                );
            }
        }
        Ok(cells)
    }

    /// Wraps [`correlation_from_baseline`](Self::correlation_from_baseline) for a fresh baseline at the smallest size.
    pub fn run_correlation(&self) -> Result<SweepReport> {
        let min = self.train_sizes()?[0];
        let cells = self.install(|| self.baseline_cells(&[min]))?;
        let baseline = SweepReport::new(
            ExperimentKind::Baseline,
            &self.config,
            self.feature_names().to_vec(),
            cells,
            Vec::new(),
        );
        self.correlation_from_baseline(&baseline)
    }

    /// For every (σ, train size, seed) and every feature: corrupt it in the test
    /// set and check whether the largest-EMD feature is the corrupted one.
    pub fn run_detection_sweep(&self) -> Result<DetectionRun> {
        let sizes = self.train_sizes()?;
        let trials = self.install(|| -> Result<Vec<DetectionTrial>> {
            let mut trials = Vec::new();
            for &seed in &self.config.seeds {
                let rep = self.replicate(seed)?;
                for &size in &sizes {
                    trials.extend(self.detection_trials(&rep, size)?);
                }
            }
            Ok(trials)
        })?;

        let mut cells = Vec::with_capacity(trials.len());
        let mut groups: BTreeMap<(u64, usize, u64), Vec<DetectionReport>> = BTreeMap::new();
        for t in &trials {
            let injected = t.report.injected_feature.clone().unwrap_or_default();
            let max_emd = t
                .report
                .per_feature_emd
                .values()
                .cloned()
                .fold(0.0, f64::max);
            cells.push(
                Cell {
                    feature: Some(injected.clone()),
                    sigma: Some(t.sigma),
                    train_size: Some(t.train_size),
                    seed: Some(t.seed),
                    ..Default::default()
                }
                .with("hit", if t.report.hit == Some(true) { 1.0 } else { 0.0 })
                .with_opt(
                    "emd_injected",
                    t.report.per_feature_emd.get(&injected).copied(),
                )
                .with("emd_max", max_emd)
                .label("detected_feature", t.report.detected_feature.clone()),
            );
            groups
                .entry((t.sigma.to_bits(), t.train_size, t.seed))
                .or_default()
                .push(t.report.clone());
        }
        let per_seed: Vec<Cell> = groups
            .into_iter()
            .map(|((sigma, size, seed), reports)| {
                Ok(Cell {
                    sigma: Some(f64::from_bits(sigma)),
                    train_size: Some(size),
                    seed: Some(seed),
                    ..Default::default()
                }
                .with("detectability", detectability_rate(&reports)?)
                .with("n_trials", reports.len() as f64))
            })
            .collect::<Result<_>>()?;
        let mut summaries = across_seeds(&per_seed, "detectability", self.feature_names());
        summaries.extend(per_seed);
        let report = SweepReport::new(
            ExperimentKind::Detection,
            &self.config,
            self.feature_names().to_vec(),
            cells,
            summaries,
        );
        Ok(DetectionRun { report, trials })
    }

    fn detection_trials(&self, rep: &Replicate, size: usize) -> Result<Vec<DetectionTrial>> {
        let set = IndexSet::build(&rep.train_subset(size), self.config.knn)?;
        let split = &rep.data.split;
        let base = compute_deltas(&set, &split.validation, DeltaSource::Base)?;
        let grid: Vec<(f64, &String)> = self
            .config
            .sigma_ladder
            .iter()
            .flat_map(|&s| self.feature_names().iter().map(move |f| (s, f)))
            .collect();
        grid.par_iter()
            .map(|&(sigma, feature)| {
                let noisy = inject_gaussian(
                    &split.test,
                    &self.noise_spec(feature, sigma, size, rep.seed),
                )?;
                let noise = compute_deltas(&set, &noisy, DeltaSource::Noise)?;
                let report =
                    detect_noisy_feature(&base, &noise, Some(feature), self.config.emd_mode)?;
                Ok(DetectionTrial {
                    sigma,
                    train_size: size,
                    seed: rep.seed,
                    report,
                })
            })
            .collect()
    }

    /// Full-train replicate, its index set and the per-feature baseline deltas.
    fn full_train_state(&self, seed: u64) -> Result<(Replicate, IndexSet, Vec<DeltaDistribution>)> {
        let rep = self.replicate(seed)?;
        let full = rep.full_train_size();
        let set = IndexSet::build(&rep.train_subset(full), self.config.knn)?;
        let base = compute_deltas(&set, &rep.data.split.validation, DeltaSource::Base)?;
        Ok((rep, set, base))
    }

    /// Recoverability of every (feature, σ, seed) at the full training size.
    pub fn run_recoverability_sweep(&self) -> Result<SweepReport> {
        let cells = self.install(|| -> Result<Vec<Cell>> {
            let mut cells = Vec::new();
            for &seed in &self.config.seeds {
                let (rep, set, base) = self.full_train_state(seed)?;
                let full = rep.full_train_size();
                let test = &rep.data.split.test;
                let grid: Vec<(usize, f64)> = (0..set.indices().len())
                    .flat_map(|j| self.config.sigma_ladder.iter().map(move |&s| (j, s)))
                    .collect();
                let batch = grid
                    .par_iter()
                    .map(|&(j, sigma)| {
                        let idx = &set.indices()[j];
                        let feature = idx.target_feature();
                        let noisy =
                            inject_gaussian(test, &self.noise_spec(feature, sigma, full, seed))?;
                        let noise = compute_delta(idx, &noisy, DeltaSource::Noise)?;
                        let threshold = baseline_threshold(&base[j], &self.config.criterion)?;
                        let (ids, ratio) =
                            flag_recoverable(&noise, threshold, &self.config.criterion);
                        Ok(Cell {
                            feature: Some(feature.to_owned()),
                            sigma: Some(sigma),
                            train_size: Some(full),
                            seed: Some(seed),
                            ..Default::default()
                        }
                        .with("recoverability", ratio)
                        .with("threshold", threshold)
                        .with("n_recoverable", ids.len() as f64)
                        .with("n_test", noise.n() as f64))
                    })
                    .collect::<Result<Vec<_>>>()?;
                cells.extend(batch);
            }
            Ok(cells)
        })?;
        let summaries = across_seeds(&cells, "recoverability", self.feature_names());
        Ok(SweepReport::new(
            ExperimentKind::Recoverability,
            &self.config,
            self.feature_names().to_vec(),
            cells,
            summaries,
        ))
    }

    /// Corrects the recoverable samples of every feature at `correction_sigma` and scores them.
    pub fn run_correction_eval(&self) -> Result<CorrectionRun> {
        let sigma = self.config.correction_sigma;
        let outcomes = self.install(|| -> Result<Vec<(Cell, CellSamples)>> {
            let mut out = Vec::new();
            for &seed in &self.config.seeds {
                let (rep, set, base) = self.full_train_state(seed)?;
                let full = rep.full_train_size();
                let test = &rep.data.split.test;
                let batch = set
                    .indices()
                    .par_iter()
                    .zip(base.par_iter())
                    .map(|(idx, base)| {
                        let feature = idx.target_feature();
                        let noisy =
                            inject_gaussian(test, &self.noise_spec(feature, sigma, full, seed))?;
                        let noise = compute_delta(idx, &noisy, DeltaSource::Noise)?;
                        let outcome = recover_feature(
                            idx,
                            base,
                            &noise,
                            test,
                            &noisy,
                            sigma,
                            &self.config.criterion,
                        )?;
                        let r = &outcome.report;
                        let n_under = r
                            .per_sample_mape
                            .values()
                            .filter(|m| **m < ACCURATE_MAPE)
                            .count();
                        let cell = Cell {
                            feature: Some(feature.to_owned()),
                            sigma: Some(sigma),
                            train_size: Some(full),
                            seed: Some(seed),
                            ..Default::default()
                        }
                        .with("recoverability", r.recoverability)
                        .with("threshold", r.threshold)
                        .with("n_recoverable", r.n_recoverable as f64)
                        .with("n_scored", r.per_sample_mape.len() as f64)
                        .with("n_under_20pct", n_under as f64)
                        .with("n_mape_excluded", r.n_mape_excluded as f64)
                        .with_opt("aggregate_mape", r.aggregate_mape)
                        .with_opt("fraction_under_20pct", r.fraction_under_20pct);
                        Ok((
                            cell,
                            CellSamples {
                                feature: feature.to_owned(),
                                seed,
                                samples: outcome.samples,
                            },
                        ))
                    })
                    .collect::<Result<Vec<_>>>()?;
                out.extend(batch);
            }
            Ok(out)
        })?;
        let (cells, samples): (Vec<Cell>, Vec<CellSamples>) = outcomes.into_iter().unzip();
        let summaries = correction_summaries(&cells, self.feature_names(), sigma);
        let report = SweepReport::new(
            ExperimentKind::Correction,
            &self.config,
            self.feature_names().to_vec(),
            cells,
            summaries,
        );
        Ok(CorrectionRun { report, samples })
    }
}

/// Per-feature pooled accuracy across seeds, then the pool over every feature.
fn correction_summaries(cells: &[Cell], features: &[String], sigma: f64) -> Vec<Cell> {
    let mut out = Vec::new();
    let (mut all_scored, mut all_under) = (0.0, 0.0);
    let mut fractions = Vec::new();
    for f in features {
        let mine: Vec<&Cell> = cells
            .iter()
            .filter(|c| c.feature.as_ref() == Some(f))
            .collect();
        let scored: f64 = mine.iter().filter_map(|c| c.metric("n_scored")).sum();
        let under: f64 = mine.iter().filter_map(|c| c.metric("n_under_20pct")).sum();
        let mapes: Vec<f64> = mine
            .iter()
            .filter_map(|c| c.metric("aggregate_mape"))
            .collect();
        all_scored += scored;
        all_under += under;
        let mut cell = Cell {
            feature: Some(f.clone()),
            sigma: Some(sigma),
            ..Default::default()
        }
        .with("n_scored", scored)
        .with("n_under_20pct", under);
        if scored > 0.0 {
            fractions.push(under / scored);
            cell = cell.with("fraction_under_20pct", under / scored);
        }
        if !mapes.is_empty() {
            cell = cell.with("mean_aggregate_mape", mean(&mapes));
        }
        out.push(cell);
    }
    let mut pooled = Cell {
        sigma: Some(sigma),
        ..Default::default()
    }
    .with("n_scored", all_scored)
    .with("n_under_20pct", all_under);
    if all_scored > 0.0 {
        pooled = pooled.with("fraction_under_20pct", all_under / all_scored);
    }
    if !fractions.is_empty() {
        pooled = pooled
            .with(
                "min_feature_fraction_under_20pct",
                fractions.iter().cloned().fold(f64::INFINITY, f64::min),
            )
            .with(
                "max_feature_fraction_under_20pct",
                fractions.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
            );
    }
    out.push(pooled);
    out
}

fn points_from(cells: &[Cell], features: &[String]) -> Vec<CorrelationPoint> {
    features
        .iter()
        .map(|f| {
            let mine: Vec<&Cell> = cells
                .iter()
                .filter(|c| c.feature.as_ref() == Some(f))
                .collect();
            let corr: Vec<f64> = mine
                .iter()
                .filter_map(|c| c.metric("mean_abs_correlation"))
                .collect();
            let fits: Vec<f64> = mine
                .iter()
                .filter_map(|c| c.metric("r2_at_min_size"))
                .collect();
            CorrelationPoint {
                feature: f.clone(),
                mean_abs_correlation: mean(&corr),
                r2_at_min_size: (!fits.is_empty()).then(|| mean(&fits)),
            }
        })
        .collect()
}
