use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::{BinaryDataset, BinaryVector, RawDataset};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    LessThan,
    GreaterThan,
}

/// One threshold feature: the derived bit is 1 when the source value lies on
/// the `direction` side of `value`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cut {
    pub value: f64,
    pub direction: Direction,
}

impl Cut {
    pub fn less_than(value: f64) -> Self {
        Cut {
            value,
            direction: Direction::LessThan,
        }
    }

    pub fn greater_than(value: f64) -> Self {
        Cut {
            value,
            direction: Direction::GreaterThan,
        }
    }

    #[inline]
    pub fn test(&self, x: f64) -> bool {
        match self.direction {
            Direction::LessThan => x < self.value,
            Direction::GreaterThan => x > self.value,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FeatureKind {
    /// Already 0/1; any non-zero value maps to 1.
    Passthrough,
    OneHot {
        categories: Vec<f64>,
    },
    /// Less-than cuts (ascending) followed by greater-than cuts (ascending).
    Thresholds {
        cuts: Vec<Cut>,
    },
    /// Single-valued in the fitting data; contributes no derived features.
    Constant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceFeature {
    pub name: String,
    #[serde(flatten)]
    pub kind: FeatureKind,
}

impl SourceFeature {
    pub fn derived_count(&self) -> usize {
        match &self.kind {
            FeatureKind::Passthrough => 1,
            FeatureKind::OneHot { categories } => categories.len(),
            FeatureKind::Thresholds { cuts } => cuts.len(),
            FeatureKind::Constant => 0,
        }
    }
}

/// Maps numeric source rows onto fixed-length binary vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinarizationSpec {
    pub features: Vec<SourceFeature>,
    pub derived_feature_names: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl BinarizationSpec {
    /// Builds a spec from source features, validating cut order and deriving
    /// feature names.
    pub fn from_features(features: Vec<SourceFeature>) -> Result<Self> {
        let mut names = Vec::new();
        for f in &features {
            match &f.kind {
                FeatureKind::Passthrough => names.push(f.name.clone()),
                FeatureKind::OneHot { categories } => {
                    if !strictly_ascending(categories.iter().copied()) {
                        return Err(Error::InvalidInput(format!(
                            "feature {:?}: one-hot categories must be distinct and sorted",
                            f.name
                        )));
                    }
                    names.extend(categories.iter().map(|c| format!("{}={c}", f.name)));
                }
                FeatureKind::Thresholds { cuts } => {
                    let split = cuts
                        .iter()
                        .position(|c| c.direction == Direction::GreaterThan)
                        .unwrap_or(cuts.len());
                    let (less, greater) = cuts.split_at(split);
                    let ordered = greater.iter().all(|c| c.direction == Direction::GreaterThan)
                        && strictly_ascending(less.iter().map(|c| c.value))
                        && strictly_ascending(greater.iter().map(|c| c.value));
                    if !ordered {
                        return Err(Error::InvalidInput(format!(
                            "feature {:?}: cuts must list ascending less-than values, then ascending greater-than values",
                            f.name
                        )));
                    }
                    names.extend(cuts.iter().map(|c| match c.direction {
                        Direction::LessThan => format!("{}<{}", f.name, c.value),
                        Direction::GreaterThan => format!("{}>{}", f.name, c.value),
                    }));
                }
                FeatureKind::Constant => {}
            }
        }
        Ok(BinarizationSpec {
            features,
            derived_feature_names: names,
            warnings: Vec::new(),
        })
    }

    /// Identity spec for data that is already binary.
    pub fn passthrough(width: usize) -> Self {
        let features = (0..width)
            .map(|i| SourceFeature {
                name: format!("f{i}"),
                kind: FeatureKind::Passthrough,
            })
            .collect();
        BinarizationSpec::from_features(features).expect("passthrough features are always valid")
    }

    /// Spec for pixel images: each pixel becomes 1 when its value is at least
    /// `threshold`.
    pub fn pixels(rows: usize, cols: usize, threshold: u8) -> Self {
        let features = (0..rows * cols)
            .map(|i| SourceFeature {
                name: format!("px_{}_{}", i / cols, i % cols),
                kind: FeatureKind::Thresholds {
                    cuts: vec![Cut::greater_than(f64::from(threshold) - 0.5)],
                },
            })
            .collect();
        BinarizationSpec::from_features(features).expect("pixel features are always valid")
    }

    pub fn source_count(&self) -> usize {
        self.features.len()
    }

    pub fn derived_count(&self) -> usize {
        self.derived_feature_names.len()
    }

    /// Rechecks the structural invariants, e.g. after deserialization.
    pub fn validate(&self) -> Result<()> {
        let rebuilt = BinarizationSpec::from_features(self.features.clone())?;
        if rebuilt.derived_feature_names != self.derived_feature_names {
            return Err(Error::InvalidInput(
                "derived feature names do not match the source features".into(),
            ));
        }
        Ok(())
    }

    /// Binarizes one source row.
    pub fn apply(&self, row: &[f64]) -> Result<BinaryVector> {
        if row.len() != self.features.len() {
            return Err(Error::DimensionMismatch {
                what: "source row length",
                expected: self.features.len(),
                actual: row.len(),
            });
        }
        let mut bits = Vec::with_capacity(self.derived_count());
        for (f, &x) in self.features.iter().zip(row) {
            match &f.kind {
                FeatureKind::Passthrough => bits.push(x != 0.0),
                FeatureKind::OneHot { categories } => bits.extend(categories.iter().map(|&c| c == x)),
                FeatureKind::Thresholds { cuts } => bits.extend(cuts.iter().map(|c| c.test(x))),
                FeatureKind::Constant => {}
            }
        }
        Ok(BinaryVector::from_bools(&bits))
    }

    /// Binarizes every row of `data`.
    pub fn apply_dataset(&self, data: &RawDataset) -> Result<BinaryDataset> {
        let vectors = data.rows.iter().map(|r| self.apply(r)).collect::<Result<Vec<_>>>()?;
        BinaryDataset::new(vectors, data.labels.clone(), data.class_names.clone(), self.clone())
    }
}

fn strictly_ascending(values: impl Iterator<Item = f64>) -> bool {
    let mut prev: Option<f64> = None;
    for v in values {
        if prev.is_some_and(|p| p >= v) {
            return false;
        }
        prev = Some(v);
    }
    true
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BinarizerConfig {
    pub max_splits_per_feature: usize,
    /// Non-binary features with at most this many distinct values are one-hot encoded.
    pub one_hot_max_cardinality: usize,
}

impl Default for BinarizerConfig {
    fn default() -> Self {
        BinarizerConfig {
            max_splits_per_feature: 4,
            one_hot_max_cardinality: 16,
        }
    }
}

/// Chooses an encoding for every source feature of `data`.
pub fn fit_binarizer(data: &RawDataset, config: &BinarizerConfig) -> Result<BinarizationSpec> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if config.max_splits_per_feature == 0 {
        return Err(Error::InvalidInput("max_splits_per_feature must be positive".into()));
    }
    let mut features = Vec::with_capacity(data.feature_count());
    let mut warnings = Vec::new();
    for (j, name) in data.feature_names.iter().enumerate() {
        let column: Vec<f64> = data.rows.iter().map(|r| r[j]).collect();
        let distinct: Vec<f64> = {
            let mut v = column.clone();
            v.sort_by(f64::total_cmp);
            v.dedup();
            v
        };
        let kind = if distinct.len() == 1 {
            let msg = format!("feature {name:?} is constant and was dropped");
            log::warn!("{msg}");
            warnings.push(msg);
            FeatureKind::Constant
        } else if distinct == [0.0, 1.0] {
            FeatureKind::Passthrough
        } else if distinct.len() <= config.one_hot_max_cardinality {
            FeatureKind::OneHot { categories: distinct }
        } else {
            let cuts = greedy_gini_cuts(&column, &data.labels, data.class_count(), config.max_splits_per_feature);
            FeatureKind::Thresholds {
                cuts: cuts.into_iter().map(Cut::less_than).collect(),
            }
        };
        features.push(SourceFeature {
            name: name.clone(),
            kind,
        });
    }
    let mut spec = BinarizationSpec::from_features(features)?;
    spec.warnings = warnings;
    Ok(spec)
}

fn gini(counts: &[usize]) -> f64 {
    let n: usize = counts.iter().sum();
    if n == 0 {
        return 0.0;
    }
    let n = n as f64;
    1.0 - counts.iter().map(|&c| (c as f64 / n).powi(2)).sum::<f64>()
}

/// Greedy threshold selection: each round adds the midpoint cut whose split
/// of its current cell gives the largest weighted Gini decrease. Returns the
/// chosen cuts in ascending order.
fn greedy_gini_cuts(column: &[f64], labels: &[usize], class_count: usize, max_cuts: usize) -> Vec<f64> {
    let mut pairs: Vec<(f64, usize)> = column.iter().copied().zip(labels.iter().copied()).collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));

    // prefix[d][c]: count of class c among rows whose value is below distinct value d
    let mut values: Vec<f64> = Vec::new();
    let mut prefix: Vec<Vec<usize>> = vec![vec![0; class_count]];
    for &(x, y) in &pairs {
        if values.last() != Some(&x) {
            values.push(x);
            let last = prefix.last().unwrap().clone();
            prefix.push(last);
        }
        prefix.last_mut().unwrap()[y] += 1;
    }
    let range_counts =
        |a: usize, b: usize| -> Vec<usize> { (0..class_count).map(|c| prefix[b][c] - prefix[a][c]).collect() };

    // boundaries between distinct values chosen so far, as indices 1..values.len()
    let mut chosen: BTreeSet<usize> = BTreeSet::new();
    let total = pairs.len() as f64;
    for _ in 0..max_cuts {
        let mut edges: Vec<usize> = vec![0];
        edges.extend(chosen.iter().copied());
        edges.push(values.len());

        let mut best: Option<(f64, usize)> = None;
        for w in edges.windows(2) {
            let (a, b) = (w[0], w[1]);
            let cell = range_counts(a, b);
            let n_cell: usize = cell.iter().sum();
            let cell_impurity = gini(&cell) * n_cell as f64;
            for j in a + 1..b {
                let left = range_counts(a, j);
                let right = range_counts(j, b);
                let nl: usize = left.iter().sum();
                let nr: usize = right.iter().sum();
                let gain = (cell_impurity - gini(&left) * nl as f64 - gini(&right) * nr as f64) / total;
                // strict comparison keeps the smallest threshold on ties
                if gain > 1e-12 && best.is_none_or(|(g, _)| gain > g + 1e-12) {
                    best = Some((gain, j));
                }
            }
        }
        match best {
            Some((_, j)) => {
                chosen.insert(j);
            }
            None => break,
        }
    }
    chosen.into_iter().map(|j| (values[j - 1] + values[j]) / 2.0).collect()
}
