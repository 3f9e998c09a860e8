//! The row-major numeric table that every stage passes around.

use std::collections::HashSet;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

/// Column name that carries row ids in CSV input and output.
pub const ROW_ID_COLUMN: &str = "row_id";

/// A column carried alongside the features but never used as a kNN input.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetColumn {
    pub name: String,
    pub values: Vec<f64>,
}

/// Dense `rows × features` matrix with feature names and stable row ids.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTable {
    feature_names: Vec<String>,
    values: Vec<f64>,
    row_ids: Vec<u64>,
    target: Option<TargetColumn>,
}

impl FeatureTable {
    /// Builds a table from row-major values.
    pub fn new(feature_names: Vec<String>, values: Vec<f64>, row_ids: Vec<u64>) -> Result<Self> {
        let d = feature_names.len();
        let mut seen = HashSet::with_capacity(d);
        for name in &feature_names {
            if !seen.insert(name.as_str()) {
                return Err(Error::DuplicateColumn(name.clone()));
            }
        }
        if values.len() != row_ids.len() * d {
            return Err(Error::DimensionMismatch {
                expected: row_ids.len() * d,
                got: values.len(),
            });
        }
        if let Some(bad) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "non-finite value at row {}, column `{}`",
                bad / d.max(1),
                feature_names[bad % d.max(1)]
            )));
        }
        let mut ids = HashSet::with_capacity(row_ids.len());
        for id in &row_ids {
            if !ids.insert(*id) {
                return Err(Error::InvalidArgument(format!("duplicate row id {id}")));
            }
        }
        Ok(Self {
            feature_names,
            values,
            row_ids,
            target: None,
        })
    }

    /// Builds a table from rows, assigning row ids `0..n`.
    pub fn from_rows(feature_names: Vec<String>, rows: &[Vec<f64>]) -> Result<Self> {
        let d = feature_names.len();
        let mut values = Vec::with_capacity(rows.len() * d);
        for row in rows {
            if row.len() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    got: row.len(),
                });
            }
            values.extend_from_slice(row);
        }
        Self::new(feature_names, values, (0..rows.len() as u64).collect())
    }

    pub fn with_target(mut self, target: TargetColumn) -> Result<Self> {
        if target.values.len() != self.n_rows() {
            return Err(Error::DimensionMismatch {
                expected: self.n_rows(),
                got: target.values.len(),
            });
        }
        if self.feature_index(&target.name).is_some() {
            return Err(Error::DuplicateColumn(target.name));
        }
        self.target = Some(target);
        Ok(self)
    }

    pub fn n_rows(&self) -> usize {
        self.row_ids.len()
    }

    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn row_ids(&self) -> &[u64] {
        &self.row_ids
    }

    pub fn target(&self) -> Option<&TargetColumn> {
        self.target.as_ref()
    }

    /// Row-major backing storage.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let d = self.n_features();
        &self.values[i * d..(i + 1) * d]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> + '_ {
        (0..self.n_rows()).map(move |i| self.row(i))
    }

    pub fn value(&self, row: usize, feature: usize) -> f64 {
        self.values[row * self.n_features() + feature]
    }

    pub fn column(&self, feature: usize) -> Vec<f64> {
        self.rows().map(|r| r[feature]).collect()
    }

    pub fn feature_index(&self, name: &str) -> Option<usize> {
        self.feature_names.iter().position(|n| n == name)
    }

    pub fn require_feature(&self, name: &str) -> Result<usize> {
        self.feature_index(name)
            .ok_or_else(|| Error::UnknownFeature(name.to_owned()))
    }

    /// Position of a row id, if present.
    pub fn row_position(&self, id: u64) -> Option<usize> {
        self.row_ids.iter().position(|&r| r == id)
    }

    /// Keeps the given rows (by position) in the given order.
    pub fn select_rows(&self, positions: &[usize]) -> Self {
        let d = self.n_features();
        let mut values = Vec::with_capacity(positions.len() * d);
        for &p in positions {
            values.extend_from_slice(self.row(p));
        }
        Self {
            feature_names: self.feature_names.clone(),
            values,
            row_ids: positions.iter().map(|&p| self.row_ids[p]).collect(),
            target: self.target.as_ref().map(|t| TargetColumn {
                name: t.name.clone(),
                values: positions.iter().map(|&p| t.values[p]).collect(),
            }),
        }
    }

    /// Keeps the named features, in the order given.
    pub fn select_features<S: AsRef<str>>(&self, names: &[S]) -> Result<Self> {
        let idx = names
            .iter()
            .map(|n| self.require_feature(n.as_ref()))
            .collect::<Result<Vec<_>>>()?;
        let mut values = Vec::with_capacity(self.n_rows() * idx.len());
        for row in self.rows() {
            values.extend(idx.iter().map(|&j| row[j]));
        }
        let mut out = Self::new(
            idx.iter().map(|&j| self.feature_names[j].clone()).collect(),
            values,
            self.row_ids.clone(),
        )?;
        out.target = self.target.clone();
        Ok(out)
    }

    /// Returns a copy with one column replaced.
    pub fn with_column(&self, feature: usize, column: &[f64]) -> Result<Self> {
        if column.len() != self.n_rows() {
            return Err(Error::DimensionMismatch {
                expected: self.n_rows(),
                got: column.len(),
            });
        }
        let mut out = self.clone();
        let d = self.n_features();
        for (i, v) in column.iter().enumerate() {
            out.values[i * d + feature] = *v;
        }
        Ok(out)
    }

    /// Applies `f(feature_index, value)` to every cell.
    pub(crate) fn map_values(&self, f: impl Fn(usize, f64) -> f64) -> Self {
        let d = self.n_features();
        let mut out = self.clone();
        for (k, v) in out.values.iter_mut().enumerate() {
            *v = f(k % d, *v);
        }
        out
    }

    /// Writes the table (features, then the target if any) as CSV with a `row_id` column.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec![ROW_ID_COLUMN.to_owned()];
        header.extend(self.feature_names.iter().cloned());
        if let Some(t) = &self.target {
            header.push(t.name.clone());
        }
        w.write_record(&header)?;
        for (i, row) in self.rows().enumerate() {
            let mut rec = Vec::with_capacity(header.len());
            rec.push(self.row_ids[i].to_string());
            rec.extend(row.iter().map(|v| v.to_string()));
            if let Some(t) = &self.target {
                rec.push(t.values[i].to_string());
            }
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io("<csv writer>", e))?;
        Ok(())
    }
}

/// Loads a CSV with one header row. Every column except `target_column` (and
/// `row_id`, if present) becomes a feature.
///
/// A `row_id` column supplies the row ids; otherwise they are the 0-based data
/// row index. Rows with an empty, NaN or infinite cell are skipped; any other
/// unparsable cell is an error.
pub fn load_table(path: impl AsRef<Path>, target_column: &str) -> Result<FeatureTable> {
    load_table_features(path, target_column, None)
}

/// Like [`load_table`], but when `features` is given only those columns (and
/// the target) are parsed, in that order; other columns may hold anything.
pub fn load_table_features(
    path: impl AsRef<Path>,
    target_column: &str,
    features: Option<&[String]>,
) -> Result<FeatureTable> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_table_features(file, target_column, features)
}

pub fn read_table<R: Read>(reader: R, target_column: &str) -> Result<FeatureTable> {
    read_table_features(reader, target_column, None)
}

pub fn read_table_features<R: Read>(
    reader: R,
    target_column: &str,
    features: Option<&[String]>,
) -> Result<FeatureTable> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_owned).collect();
    let mut seen = HashSet::new();
    for h in &header {
        if !seen.insert(h.as_str()) {
            return Err(Error::DuplicateColumn(h.clone()));
        }
    }
    let find = |name: &str| {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn(name.to_owned()))
    };
    let target_idx = find(target_column)?;
    let id_idx = header.iter().position(|h| h == ROW_ID_COLUMN);
    let feature_idx: Vec<usize> = match features {
        Some(names) => names.iter().map(|n| find(n)).collect::<Result<_>>()?,
        None => (0..header.len())
            .filter(|&j| j != target_idx && Some(j) != id_idx)
            .collect(),
    };
    if feature_idx.contains(&target_idx) {
        return Err(Error::InvalidArgument(format!(
            "{target_column:?} is both the target and a feature"
        )));
    }
    let feature_names: Vec<String> = feature_idx.iter().map(|&j| header[j].clone()).collect();

    let mut values = Vec::new();
    let mut targets = Vec::new();
    let mut row_ids = Vec::new();
    let mut skipped = 0usize;
    let mut parsed = Vec::with_capacity(feature_idx.len());
    for (row, record) in rdr.records().enumerate() {
        let record = record?;
        let cell = |j: usize| -> Result<Option<f64>> {
            let text = record.get(j).unwrap_or("");
            if text.is_empty() {
                return Ok(None);
            }
            let v: f64 = text.parse().map_err(|_| Error::NonNumeric {
                row,
                column: header[j].clone(),
                value: text.to_owned(),
            })?;
            Ok(v.is_finite().then_some(v))
        };
        let id = match id_idx {
            Some(j) => {
                let text = record.get(j).unwrap_or("");
                text.parse::<u64>().map_err(|_| Error::NonNumeric {
                    row,
                    column: header[j].clone(),
                    value: text.to_owned(),
                })?
            }
            None => row as u64,
        };
        parsed.clear();
        let mut complete = true;
        for &j in &feature_idx {
            match cell(j)? {
                Some(v) => parsed.push(v),
                None => complete = false,
            }
        }
        let target = cell(target_idx)?;
        match target {
            Some(t) if complete => {
                values.extend_from_slice(&parsed);
                targets.push(t);
                row_ids.push(id);
            }
            _ => skipped += 1,
        }
    }
    if skipped > 0 {
        log::warn!("skipped {skipped} rows with missing or non-finite cells");
    }
    FeatureTable::new(feature_names, values, row_ids)?.with_target(TargetColumn {
        name: target_column.to_owned(),
        values: targets,
    })
}

/// Reads a kept-feature list: one feature name per line, blank lines and `#` comments ignored.
pub fn read_feature_list(path: impl AsRef<Path>) -> Result<Vec<String>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(parse_feature_list(&text))
}

pub fn parse_feature_list(text: &str) -> Vec<String> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::to_owned)
        .collect()
}
