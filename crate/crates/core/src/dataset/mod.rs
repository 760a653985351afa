//! Tabular and image ingestion, binarization of numeric features, and
//! train/holdout splitting.

mod binarize;
mod idx;

use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use binarize::{fit_binarizer, BinarizationSpec, BinarizerConfig, Cut, Direction, FeatureKind, SourceFeature};
pub use idx::{load_idx, load_idx_raw, read_idx_images, read_idx_labels, IdxImages};

/// A fixed-length vector of 0/1 feature values.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BinaryVector(Vec<u8>);

impl BinaryVector {
    /// Builds a vector from bytes, rejecting anything other than 0 or 1.
    pub fn new(bits: Vec<u8>) -> Result<Self> {
        if let Some(pos) = bits.iter().position(|&b| b > 1) {
            return Err(Error::InvalidInput(format!(
                "feature {pos} has value {}, expected 0 or 1",
                bits[pos]
            )));
        }
        Ok(BinaryVector(bits))
    }

    pub fn from_bools(bits: &[bool]) -> Self {
        BinaryVector(bits.iter().map(|&b| u8::from(b)).collect())
    }

    pub fn zeros(len: usize) -> Self {
        BinaryVector(vec![0; len])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    #[inline]
    pub fn get(&self, index: usize) -> bool {
        self.0[index] != 0
    }

    pub fn bits(&self) -> &[u8] {
        &self.0
    }

    /// Copy of `self` with bit `index` inverted.
    pub fn flipped(&self, index: usize) -> Result<Self> {
        if index >= self.0.len() {
            return Err(Error::OutOfRange {
                what: "feature vector",
                index,
                len: self.0.len(),
            });
        }
        let mut bits = self.0.clone();
        bits[index] ^= 1;
        Ok(BinaryVector(bits))
    }

    pub fn hamming(&self, other: &BinaryVector) -> usize {
        self.0.iter().zip(&other.0).filter(|(a, b)| a != b).count()
    }

    /// Compact `010` rendering.
    pub fn to_bit_string(&self) -> String {
        self.0.iter().map(|&b| if b == 1 { '1' } else { '0' }).collect()
    }
}

/// Space-separated 0/1 values, the vector-file format.
impl fmt::Display for BinaryVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, b) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str(" ")?;
            }
            write!(f, "{b}")?;
        }
        Ok(())
    }
}

impl FromStr for BinaryVector {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bits = s
            .split_whitespace()
            .map(|tok| match tok {
                "0" => Ok(0u8),
                "1" => Ok(1u8),
                other => Err(Error::InvalidInput(format!("vector value {other:?} is not 0 or 1"))),
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(BinaryVector(bits))
    }
}

/// Which CSV column holds the class label.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LabelColumn {
    Index(usize),
    Name(String),
    /// The last column.
    Last,
}

impl FromStr for LabelColumn {
    type Err = std::convert::Infallible;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Ok(match s {
            "last" => LabelColumn::Last,
            _ => match s.parse::<usize>() {
                Ok(i) => LabelColumn::Index(i),
                Err(_) => LabelColumn::Name(s.to_string()),
            },
        })
    }
}

/// Numeric rows with contiguous integer class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct RawDataset {
    pub rows: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    pub feature_names: Vec<String>,
    /// Original label text for each class identifier.
    pub class_names: Vec<String>,
}

impl RawDataset {
    pub fn new(
        rows: Vec<Vec<f64>>,
        labels: Vec<usize>,
        feature_names: Vec<String>,
        class_names: Vec<String>,
    ) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::EmptyDataset);
        }
        if labels.len() != rows.len() {
            return Err(Error::DimensionMismatch {
                what: "label count",
                expected: rows.len(),
                actual: labels.len(),
            });
        }
        let width = feature_names.len();
        for row in &rows {
            if row.len() != width {
                return Err(Error::DimensionMismatch {
                    what: "row length",
                    expected: width,
                    actual: row.len(),
                });
            }
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= class_names.len()) {
            return Err(Error::UnknownClass {
                class: bad,
                class_count: class_names.len(),
            });
        }
        Ok(RawDataset {
            rows,
            labels,
            feature_names,
            class_names,
        })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn feature_count(&self) -> usize {
        self.feature_names.len()
    }

    pub fn class_count(&self) -> usize {
        self.class_names.len()
    }

    /// Keeps only the first `n` rows.
    pub fn truncate(&mut self, n: usize) {
        self.rows.truncate(n);
        self.labels.truncate(n);
    }

    /// Writes the dataset as CSV with the label in the last column.
    pub fn write_csv(&self, path: &Path, header: bool) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        if header {
            let mut names: Vec<&str> = self.feature_names.iter().map(String::as_str).collect();
            names.push("label");
            w.write_record(&names)?;
        }
        for (row, &label) in self.rows.iter().zip(&self.labels) {
            let mut rec: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            rec.push(self.class_names[label].clone());
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }
}

/// Reads a comma-separated file. Labels are remapped to contiguous class
/// identifiers in sorted order (numeric order when every label parses as a
/// number, lexicographic otherwise).
pub fn load_csv(path: &Path, label_column: &LabelColumn, has_header: bool) -> Result<RawDataset> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(has_header)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(file);

    let header: Option<Vec<String>> = if has_header {
        Some(reader.headers()?.iter().map(str::to_string).collect())
    } else {
        None
    };

    let mut records = Vec::new();
    for rec in reader.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        records.push((line, rec));
    }
    let width = match (&header, records.first()) {
        (Some(h), _) => h.len(),
        (None, Some((_, r))) => r.len(),
        (None, None) => return Err(Error::EmptyDataset),
    };
    if records.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if width < 2 {
        return Err(Error::Parse {
            path: path.into(),
            line: 1,
            message: "need at least one feature column and a label column".into(),
        });
    }

    let label_idx = match label_column {
        LabelColumn::Last => width - 1,
        LabelColumn::Index(i) if *i < width => *i,
        LabelColumn::Index(i) => {
            return Err(Error::OutOfRange {
                what: "CSV columns",
                index: *i,
                len: width,
            })
        }
        LabelColumn::Name(name) => header
            .as_ref()
            .and_then(|h| h.iter().position(|c| c == name))
            .ok_or_else(|| Error::InvalidInput(format!("no column named {name:?}")))?,
    };

    let feature_names: Vec<String> = match &header {
        Some(h) => h
            .iter()
            .enumerate()
            .filter(|&(i, _)| i != label_idx)
            .map(|(_, n)| n.clone())
            .collect(),
        None => (0..width - 1).map(|i| format!("f{i}")).collect(),
    };

    let mut rows = Vec::with_capacity(records.len());
    let mut raw_labels = Vec::with_capacity(records.len());
    for (line, rec) in &records {
        if rec.len() != width {
            return Err(Error::Parse {
                path: path.into(),
                line: *line,
                message: format!("expected {width} fields, found {}", rec.len()),
            });
        }
        let mut row = Vec::with_capacity(width - 1);
        for (i, cell) in rec.iter().enumerate() {
            if i == label_idx {
                raw_labels.push(cell.to_string());
                continue;
            }
            let v: f64 = cell.parse().map_err(|_| Error::Parse {
                path: path.into(),
                line: *line,
                message: format!("column {i}: {cell:?} is not a number"),
            })?;
            row.push(v);
        }
        rows.push(row);
    }

    let (labels, class_names) = remap_labels(&raw_labels);
    RawDataset::new(rows, labels, feature_names, class_names)
}

fn remap_labels(raw: &[String]) -> (Vec<usize>, Vec<String>) {
    let distinct: BTreeSet<&str> = raw.iter().map(String::as_str).collect();
    let mut names: Vec<&str> = distinct.into_iter().collect();
    let numeric: Option<Vec<f64>> = names.iter().map(|s| s.parse::<f64>().ok()).collect();
    if let Some(values) = numeric {
        let mut paired: Vec<(f64, &str)> = values.into_iter().zip(names.iter().copied()).collect();
        paired.sort_by(|a, b| a.0.total_cmp(&b.0));
        names = paired.into_iter().map(|(_, n)| n).collect();
    }
    let labels = raw
        .iter()
        .map(|l| names.iter().position(|n| n == l).expect("label collected above"))
        .collect();
    (labels, names.into_iter().map(str::to_string).collect())
}

/// Binarized instances with their labels and the spec that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct BinaryDataset {
    pub vectors: Vec<BinaryVector>,
    pub labels: Vec<usize>,
    pub class_names: Vec<String>,
    pub spec: BinarizationSpec,
}

impl BinaryDataset {
    pub fn new(
        vectors: Vec<BinaryVector>,
        labels: Vec<usize>,
        class_names: Vec<String>,
        spec: BinarizationSpec,
    ) -> Result<Self> {
        if vectors.is_empty() {
            return Err(Error::EmptyDataset);
        }
        if labels.len() != vectors.len() {
            return Err(Error::DimensionMismatch {
                what: "label count",
                expected: vectors.len(),
                actual: labels.len(),
            });
        }
        let width = spec.derived_count();
        for v in &vectors {
            if v.len() != width {
                return Err(Error::DimensionMismatch {
                    what: "vector length",
                    expected: width,
                    actual: v.len(),
                });
            }
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= class_names.len()) {
            return Err(Error::UnknownClass {
                class: bad,
                class_count: class_names.len(),
            });
        }
        Ok(BinaryDataset {
            vectors,
            labels,
            class_names,
            spec,
        })
    }

    /// Wraps already-binary vectors with a passthrough spec.
    pub fn from_bits(vectors: Vec<BinaryVector>, labels: Vec<usize>, class_count: usize) -> Result<Self> {
        let width = vectors.first().map_or(0, BinaryVector::len);
        let spec = BinarizationSpec::passthrough(width);
        let class_names = (0..class_count).map(|c| c.to_string()).collect();
        BinaryDataset::new(vectors, labels, class_names, spec)
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn feature_count(&self) -> usize {
        self.spec.derived_count()
    }

    pub fn class_count(&self) -> usize {
        self.class_names.len()
    }

    /// Rows at `indices`, in the given order.
    pub fn subset(&self, indices: &[usize]) -> BinaryDataset {
        BinaryDataset {
            vectors: indices.iter().map(|&i| self.vectors[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            class_names: self.class_names.clone(),
            spec: self.spec.clone(),
        }
    }
}

/// Deterministic (train, holdout) index sets for `n` rows, each sorted
/// ascending. `fraction` is the holdout share.
pub fn holdout_indices(n: usize, fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::InvalidInput(format!(
            "holdout fraction {fraction} must lie strictly between 0 and 1"
        )));
    }
    let n_test = (n as f64 * fraction).round() as usize;
    if n_test == 0 || n_test >= n {
        return Err(Error::InvalidInput(format!(
            "holdout fraction {fraction} of {n} rows leaves an empty part"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut test = order[..n_test].to_vec();
    let mut train = order[n_test..].to_vec();
    test.sort_unstable();
    train.sort_unstable();
    Ok((train, test))
}

/// Splits `data` into (train, holdout) parts.
pub fn split_holdout(data: &BinaryDataset, fraction: f64, seed: u64) -> Result<(BinaryDataset, BinaryDataset)> {
    let (train, test) = holdout_indices(data.len(), fraction, seed)?;
    Ok((data.subset(&train), data.subset(&test)))
}
