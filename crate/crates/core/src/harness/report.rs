//! Sweep results and their on-disk form: one full-precision JSON document and
//! one tidy CSV (one row per cell, then the aggregate rows) per experiment kind.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Baseline,
    Correlation,
    Detection,
    Recoverability,
    Correction,
}

impl ExperimentKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ExperimentKind::Baseline => "baseline",
            ExperimentKind::Correlation => "correlation",
            ExperimentKind::Detection => "detection",
            ExperimentKind::Recoverability => "recoverability",
            ExperimentKind::Correction => "correction",
        }
    }
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One grid point (or one aggregate over grid points). Axes that do not apply are `None`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Cell {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feature: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_size: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub metrics: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub labels: BTreeMap<String, String>,
}

impl Cell {
    pub fn metric(&self, name: &str) -> Option<f64> {
        self.metrics.get(name).copied()
    }

    pub(crate) fn with(mut self, name: &str, value: f64) -> Self {
        if value.is_finite() {
            self.metrics.insert(name.to_owned(), value);
        }
        self
    }

    pub(crate) fn with_opt(self, name: &str, value: Option<f64>) -> Self {
        match value {
            Some(v) => self.with(name, v),
            None => self,
        }
    }

    pub(crate) fn label(mut self, name: &str, value: impl Into<String>) -> Self {
        self.labels.insert(name.to_owned(), value.into());
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub kind: ExperimentKind,
    pub version: String,
    pub master_seed: u64,
    pub config: ExperimentConfig,
    pub features: Vec<String>,
    pub cells: Vec<Cell>,
    pub summaries: Vec<Cell>,
}

impl SweepReport {
    pub(crate) fn new(
        kind: ExperimentKind,
        config: &ExperimentConfig,
        features: Vec<String>,
        mut cells: Vec<Cell>,
        mut summaries: Vec<Cell>,
    ) -> Self {
        canonical_sort(&mut cells, &features);
        canonical_sort(&mut summaries, &features);
        Self {
            kind,
            version: env!("CARGO_PKG_VERSION").to_owned(),
            master_seed: config.master_seed,
            config: config.clone(),
            features,
            cells,
            summaries,
        }
    }

    /// Summary rows that aggregate across seeds (no seed axis).
    pub fn seed_aggregates(&self) -> impl Iterator<Item = &Cell> {
        self.summaries.iter().filter(|c| c.seed.is_none())
    }

    pub fn file_stem(&self) -> String {
        format!("{}_seed{}", self.kind, self.master_seed)
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    /// Tidy CSV: fixed axis columns, then every metric, then every label, sorted by name.
    pub fn to_csv(&self) -> Result<String> {
        let all = || self.cells.iter().chain(&self.summaries);
        let metric_cols: BTreeSet<&str> = all()
            .flat_map(|c| c.metrics.keys().map(String::as_str))
            .collect();
        let label_cols: BTreeSet<&str> = all()
            .flat_map(|c| c.labels.keys().map(String::as_str))
            .collect();

        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["row_type", "feature", "sigma", "train_size", "seed"];
        header.extend(metric_cols.iter());
        header.extend(label_cols.iter());
        w.write_record(&header)?;
        let rows = self
            .cells
            .iter()
            .map(|c| ("cell", c))
            .chain(self.summaries.iter().map(|c| ("summary", c)));
        for (row_type, c) in rows {
            let mut rec = vec![
                row_type.to_owned(),
                c.feature.clone().unwrap_or_default(),
                c.sigma.map(|s| format_sig(s, 6)).unwrap_or_default(),
                c.train_size.map(|s| s.to_string()).unwrap_or_default(),
                c.seed.map(|s| s.to_string()).unwrap_or_default(),
            ];
            rec.extend(metric_cols.iter().map(|m| {
                c.metrics
                    .get(*m)
                    .map(|v| format_sig(*v, 6))
                    .unwrap_or_default()
            }));
            rec.extend(
                label_cols
                    .iter()
                    .map(|l| c.labels.get(*l).cloned().unwrap_or_default()),
            );
            w.write_record(&rec)?;
        }
        let bytes = w
            .into_inner()
            .map_err(|e| Error::io("<csv buffer>", e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}

/// Sorts by sigma, train size, seed, then feature position; absent axes first.
fn canonical_sort(cells: &mut [Cell], features: &[String]) {
    let pos = |f: &Option<String>| {
        f.as_ref()
            .map(|f| features.iter().position(|x| x == f).unwrap_or(usize::MAX))
    };
    cells.sort_by(|a, b| {
        let sa = a.sigma.map(|s| s.to_bits());
        let sb = b.sigma.map(|s| s.to_bits());
        // Non-negative sigmas order the same as their bit patterns.
        sa.cmp(&sb)
            .then(a.train_size.cmp(&b.train_size))
            .then(a.seed.cmp(&b.seed))
            .then(pos(&a.feature).cmp(&pos(&b.feature)))
    });
}

/// Formats `x` with `digits` significant digits, `%g` style.
pub fn format_sig(x: f64, digits: usize) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return x.to_string();
    }
    let digits = digits.max(1);
    let sci = format!("{:.*e}", digits - 1, x);
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if exp < -4 || exp >= digits as i32 {
        let mantissa = trim_zeros(mantissa);
        return format!("{mantissa}e{exp}");
    }
    let decimals = (digits as i32 - 1 - exp).max(0) as usize;
    trim_zeros(&format!("{x:.decimals$}")).to_owned()
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

/// Writes `<kind>_seed<master>.json` and `.csv` into `output_dir`, returning their paths.
pub fn emit_report(report: &SweepReport, output_dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = output_dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let stem = report.file_stem();
    let json_path = dir.join(format!("{stem}.json"));
    let csv_path = dir.join(format!("{stem}.csv"));
    write_file(&json_path, report.to_json()?.as_bytes())?;
    write_file(&csv_path, report.to_csv()?.as_bytes())?;
    Ok(vec![json_path, csv_path])
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_report(path: impl AsRef<Path>) -> Result<SweepReport> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}
