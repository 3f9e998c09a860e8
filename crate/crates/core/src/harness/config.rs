use std::collections::HashSet;
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::detect::EmdMode;
use crate::error::{Error, Result};
use crate::knn::KnnConfig;
use crate::noise::sigma_ladder;
use crate::recover::RecoverabilityCriterion;

/// One entry of the training-size axis: a row count, or `"full"` for the whole train split.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainSize {
    Rows(usize),
    Full,
}

impl TrainSize {
    pub fn resolve(self, full: usize) -> Result<usize> {
        match self {
            TrainSize::Full => Ok(full),
            TrainSize::Rows(z) if z <= full => Ok(z),
            TrainSize::Rows(z) => Err(Error::Config(format!(
                "train size {z} exceeds the {full}-row training split"
            ))),
        }
    }
}

impl fmt::Display for TrainSize {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TrainSize::Rows(z) => write!(f, "{z}"),
            TrainSize::Full => f.write_str("full"),
        }
    }
}

impl Serialize for TrainSize {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            TrainSize::Rows(z) => s.serialize_u64(*z as u64),
            TrainSize::Full => s.serialize_str("full"),
        }
    }
}

impl<'de> Deserialize<'de> for TrainSize {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Rows(usize),
            Word(String),
        }
        match Raw::deserialize(d)? {
            Raw::Rows(z) => Ok(TrainSize::Rows(z)),
            Raw::Word(w) if w == "full" => Ok(TrainSize::Full),
            Raw::Word(w) => Err(serde::de::Error::custom(format!(
                "train size must be a row count or \"full\", got {w:?}"
            ))),
        }
    }
}

/// Every knob of an experiment run. Mirrors the JSON config file field for field;
/// unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub input_path: PathBuf,
    pub target_column: String,
    pub kept_features_path: Option<PathBuf>,
    pub prune_threshold: f64,
    pub split_ratios: [f64; 3],
    pub knn: KnnConfig,
    pub sigma_ladder: Vec<f64>,
    pub train_sizes: Vec<TrainSize>,
    /// Replicate identifiers; each one re-draws the split, the subsample and the noise.
    pub seeds: Vec<u64>,
    pub criterion: RecoverabilityCriterion,
    pub output_dir: PathBuf,
    pub master_seed: u64,
    pub correction_sigma: f64,
    pub emd_mode: EmdMode,
    pub clip_noise: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            input_path: PathBuf::new(),
            target_column: String::new(),
            kept_features_path: None,
            prune_threshold: 0.7,
            split_ratios: [0.8, 0.1, 0.1],
            knn: KnnConfig::default(),
            sigma_ladder: sigma_ladder(0.015625, 0.25).expect("static ladder"),
            train_sizes: vec![TrainSize::Full],
            seeds: (0..5).collect(),
            criterion: RecoverabilityCriterion::default(),
            output_dir: PathBuf::from("out"),
            master_seed: 0,
            correction_sigma: 0.25,
            emd_mode: EmdMode::Signed,
            clip_noise: false,
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a JSON config. Relative `input_path` and `kept_features_path` are
    /// taken relative to the config file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_json(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })?;
        let base = path.parent().unwrap_or(Path::new(""));
        if !cfg.input_path.as_os_str().is_empty() && cfg.input_path.is_relative() {
            cfg.input_path = base.join(&cfg.input_path);
        }
        if let Some(kept) = cfg.kept_features_path.as_mut().filter(|p| p.is_relative()) {
            *kept = base.join(&*kept);
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.sigma_ladder.is_empty() {
            return bad("sigma_ladder is empty".into());
        }
        if self.sigma_ladder.iter().any(|s| !s.is_finite() || *s < 0.0) {
            return bad("sigma_ladder entries must be finite and non-negative".into());
        }
        if self.sigma_ladder.windows(2).any(|w| w[1] <= w[0]) {
            return bad("sigma_ladder must be strictly increasing".into());
        }
        if self.train_sizes.is_empty() {
            return bad("train_sizes is empty".into());
        }
        let mut last = 0;
        for (i, size) in self.train_sizes.iter().enumerate() {
            match size {
                TrainSize::Rows(0) => return bad("train sizes must be positive".into()),
                TrainSize::Rows(z) if *z < last => {
                    return bad("train_sizes must be non-decreasing".into())
                }
                TrainSize::Rows(z) => last = *z,
                TrainSize::Full if i + 1 != self.train_sizes.len() => {
                    return bad("\"full\" may only be the last train size".into())
                }
                TrainSize::Full => {}
            }
        }
        if self.seeds.is_empty() {
            return bad("seeds is empty".into());
        }
        if self.seeds.iter().collect::<HashSet<_>>().len() != self.seeds.len() {
            return bad("seeds must be distinct".into());
        }
        if !(self.prune_threshold > 0.0 && self.prune_threshold <= 1.0) {
            return bad(format!(
                "prune_threshold {} outside (0, 1]",
                self.prune_threshold
            ));
        }
        if self.split_ratios.iter().any(|r| !(*r > 0.0))
            || (self.split_ratios.iter().sum::<f64>() - 1.0).abs() > 1e-9
        {
            return bad(format!(
                "split_ratios {:?} must be positive and sum to 1",
                self.split_ratios
            ));
        }
        if !(self.correction_sigma.is_finite() && self.correction_sigma >= 0.0) {
            return bad("correction_sigma must be finite and non-negative".into());
        }
        self.knn.validate()?;
        self.criterion.validate()?;
        Ok(())
    }

    /// Resolves the train-size axis against the actual split size.
    pub fn resolved_train_sizes(&self, full: usize) -> Result<Vec<usize>> {
        let mut sizes = self
            .train_sizes
            .iter()
            .map(|s| s.resolve(full))
            .collect::<Result<Vec<_>>>()?;
        sizes.dedup();
        Ok(sizes)
    }
}

/// Doubling ladder `start, 2·start, …`, with the overshooting step clamped to `full`.
pub fn train_size_ladder(full: usize, start: usize) -> Result<Vec<usize>> {
    if start == 0 || start > full {
        return Err(Error::InvalidArgument(format!(
            "train size ladder needs 0 < start <= full, got start {start}, full {full}"
        )));
    }
    let mut out = vec![start];
    let mut z = start;
    while z < full {
        z = (z * 2).min(full);
        out.push(z);
    }
    Ok(out)
}
