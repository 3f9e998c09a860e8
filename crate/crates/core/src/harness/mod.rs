//! Experiment orchestration: data preparation per replicate seed, the four
//! sweep kinds, and report emission.
//!
//! Every random draw comes from a seed derived in [`seeds`], every parallel
//! result is collected in input order and re-sorted canonically before it is
//! written, so output bytes depend only on the input file and the config.

pub mod config;
pub mod report;
pub mod seeds;
mod sweeps;

use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::ingest::{
    prune_correlated, scale_split, split_dataset, split_sizes, DroppedFeature, ScaledSplit,
    ScalerParams,
};
use crate::table::{load_table_features, read_feature_list, FeatureTable};

pub use config::{train_size_ladder, ExperimentConfig, TrainSize};
pub use report::{emit_report, format_sig, load_report, Cell, ExperimentKind, SweepReport};
pub use sweeps::{CellSamples, CorrectionRun, CorrelationPoint, DetectionRun, DetectionTrial};

/// A loaded, feature-selected and correlation-pruned dataset ready for sweeps.
pub struct Experiment {
    config: ExperimentConfig,
    data: FeatureTable,
    dropped: Vec<DroppedFeature>,
    pool: Option<Arc<rayon::ThreadPool>>,
}

/// Everything that depends on one replicate seed: the scaled split and the
/// permutation whose prefixes are the training subsamples.
pub struct Replicate {
    pub seed: u64,
    pub data: ScaledSplit,
    subsample_order: Vec<usize>,
}

impl Replicate {
    pub fn full_train_size(&self) -> usize {
        self.subsample_order.len()
    }

    /// The first `size` rows of this replicate's subsample permutation.
    pub fn train_subset(&self, size: usize) -> FeatureTable {
        let size = size.min(self.subsample_order.len());
        self.data
            .split
            .train
            .select_rows(&self.subsample_order[..size])
    }
}

impl Experiment {
    /// Loads the CSV named by the config, restricts to the kept features and prunes.
    pub fn load(config: ExperimentConfig) -> Result<Self> {
        config.validate()?;
        if config.input_path.as_os_str().is_empty() {
            return Err(Error::Config("input_path is not set".into()));
        }
        if config.target_column.is_empty() {
            return Err(Error::Config("target_column is not set".into()));
        }
        let kept = config
            .kept_features_path
            .as_ref()
            .map(read_feature_list)
            .transpose()?;
        let table =
            load_table_features(&config.input_path, &config.target_column, kept.as_deref())?;
        Self::from_table(config, table)
    }

    /// Uses an in-memory table instead of `input_path`.
    pub fn from_table(config: ExperimentConfig, table: FeatureTable) -> Result<Self> {
        config.validate()?;
        let table = match &config.kept_features_path {
            Some(path) => {
                let kept = read_feature_list(path)?;
                if kept.is_empty() {
                    return Err(Error::Config(format!(
                        "{}: no feature names",
                        path.display()
                    )));
                }
                table.select_features(&kept)?
            }
            None => table,
        };
        let (data, dropped) = prune_correlated(&table, config.prune_threshold)?;
        if data.n_features() < 2 {
            return Err(Error::InvalidArgument(format!(
                "only {} feature(s) left after pruning; need at least 2",
                data.n_features()
            )));
        }
        split_sizes(data.n_rows(), config.split_ratios)?;
        Ok(Self {
            config,
            data,
            dropped,
            pool: None,
        })
    }

    /// Runs all parallel work on a dedicated pool of `threads` workers.
    pub fn with_threads(mut self, threads: usize) -> Result<Self> {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
        self.pool = Some(Arc::new(pool));
        Ok(self)
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.config
    }

    pub fn data(&self) -> &FeatureTable {
        &self.data
    }

    pub fn dropped(&self) -> &[DroppedFeature] {
        &self.dropped
    }

    pub fn feature_names(&self) -> &[String] {
        self.data.feature_names()
    }

    pub fn full_train_size(&self) -> usize {
        split_sizes(self.data.n_rows(), self.config.split_ratios).map_or(0, |s| s[0])
    }

    pub fn train_sizes(&self) -> Result<Vec<usize>> {
        self.config.resolved_train_sizes(self.full_train_size())
    }

    pub(crate) fn install<R: Send>(&self, f: impl FnOnce() -> R + Send) -> R {
        match &self.pool {
            Some(pool) => pool.install(f),
            None => f(),
        }
    }

    /// Split, scale and subsample order for one replicate seed.
    pub fn replicate(&self, seed: u64) -> Result<Replicate> {
        let master = self.config.master_seed;
        let split = split_dataset(
            &self.data,
            self.config.split_ratios,
            seeds::split_seed(master, seed),
        )?;
        let data = scale_split(split)?;
        let mut subsample_order: Vec<usize> = (0..data.split.train.n_rows()).collect();
        subsample_order.shuffle(&mut ChaCha8Rng::seed_from_u64(seeds::subsample_seed(
            master, seed,
        )));
        Ok(Replicate {
            seed,
            data,
            subsample_order,
        })
    }

    /// Writes every replicate's scaled subsets and scaler parameters, plus the pruning log.
    pub fn write_ingest(&self, dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
        #[derive(Serialize)]
        struct Scalers<'a> {
            train: &'a ScalerParams,
            validation: &'a ScalerParams,
            test: &'a ScalerParams,
        }
        #[derive(Serialize)]
        struct PruneLog<'a> {
            threshold: f64,
            kept: &'a [String],
            dropped: &'a [DroppedFeature],
        }

        let dir = dir.as_ref();
        let mut written = Vec::new();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let log_path = dir.join("pruning.json");
        let log = PruneLog {
            threshold: self.config.prune_threshold,
            kept: self.feature_names(),
            dropped: &self.dropped,
        };
        report::write_file(
            &log_path,
            (serde_json::to_string_pretty(&log)? + "\n").as_bytes(),
        )?;
        written.push(log_path);

        for &seed in &self.config.seeds {
            let rep = self.replicate(seed)?;
            let sub = dir.join(format!("split_seed{seed}"));
            std::fs::create_dir_all(&sub).map_err(|e| Error::io(&sub, e))?;
            let split = &rep.data.split;
            for (name, table) in [
                ("train", &split.train),
                ("validation", &split.validation),
                ("test", &split.test),
            ] {
                let path = sub.join(format!("{name}.csv"));
                let mut buf = Vec::new();
                table.write_csv(&mut buf)?;
                report::write_file(&path, &buf)?;
                written.push(path);
            }
            let [train, validation, test] = &rep.data.scalers;
            let path = sub.join("scalers.json");
            let json = serde_json::to_string_pretty(&Scalers {
                train,
                validation,
                test,
            })? + "\n";
            report::write_file(&path, json.as_bytes())?;
            written.push(path);
        }
        Ok(written)
    }
}

/// Loads the config's dataset and runs the baseline R² sweep.
pub fn run_baseline_eval(config: &ExperimentConfig) -> Result<SweepReport> {
    Experiment::load(config.clone())?.run_baseline_eval()
}

/// Loads the config's dataset and pairs mean |r| with R² at the smallest train size.
pub fn correlation_vs_r2(config: &ExperimentConfig) -> Result<Vec<CorrelationPoint>> {
    Experiment::load(config.clone())?.correlation_vs_r2()
}

pub fn run_detection_sweep(config: &ExperimentConfig) -> Result<SweepReport> {
    Ok(Experiment::load(config.clone())?
        .run_detection_sweep()?
        .report)
}

pub fn run_recoverability_sweep(config: &ExperimentConfig) -> Result<SweepReport> {
    Experiment::load(config.clone())?.run_recoverability_sweep()
}

pub fn run_correction_eval(config: &ExperimentConfig) -> Result<SweepReport> {
    Ok(Experiment::load(config.clone())?
        .run_correction_eval()?
        .report)
}
