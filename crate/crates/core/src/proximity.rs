//! The training proximity-distance space.
//!
//! Two instances' proximity is the fraction of trees in which they reach the
//! same leaf; their proximity distance is one minus that, i.e. the Hamming
//! distance of their leaf signatures divided by the tree count.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::BinaryDataset;
use crate::error::{Error, Result};
use crate::forest::{Forest, LeafSignature};

/// Which labels define in-group membership.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Membership {
    /// Labels predicted by the forest for its own training rows.
    #[default]
    Predicted,
    True,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Group {
    In,
    Out,
}

/// Frozen leaf signatures and labels of the training set.
#[derive(Debug, Clone, PartialEq)]
pub struct ProximityStore {
    tree_count: usize,
    len: usize,
    class_count: usize,
    /// Tree-major: `leaves[t * len + i]` is instance i's leaf in tree t.
    leaves: Vec<u32>,
    predicted_labels: Vec<usize>,
    true_labels: Vec<usize>,
}

/// Signatures and predictions for the forest's training rows.
pub fn build_store(forest: &Forest, train: &BinaryDataset) -> Result<ProximityStore> {
    if train.feature_count() != forest.feature_count() {
        return Err(Error::DimensionMismatch {
            what: "training feature count",
            expected: forest.feature_count(),
            actual: train.feature_count(),
        });
    }
    if train.len() != forest.train_size {
        return Err(Error::DimensionMismatch {
            what: "training set size",
            expected: forest.train_size,
            actual: train.len(),
        });
    }
    let rows: Vec<(Vec<u32>, usize)> = train
        .vectors
        .par_iter()
        .map(|v| {
            let sig = forest.leaf_signature(v)?;
            let class = forest.predict(v)?.class;
            Ok((sig.0, class))
        })
        .collect::<Result<_>>()?;

    let n = train.len();
    let t = forest.tree_count();
    let mut leaves = vec![0u32; n * t];
    for (i, (sig, _)) in rows.iter().enumerate() {
        for (tree, &leaf) in sig.iter().enumerate() {
            leaves[tree * n + i] = leaf;
        }
    }
    Ok(ProximityStore {
        tree_count: t,
        len: n,
        class_count: forest.class_count,
        leaves,
        predicted_labels: rows.into_iter().map(|(_, c)| c).collect(),
        true_labels: train.labels.clone(),
    })
}

impl ProximityStore {
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn tree_count(&self) -> usize {
        self.tree_count
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn predicted_labels(&self) -> &[usize] {
        &self.predicted_labels
    }

    pub fn true_labels(&self) -> &[usize] {
        &self.true_labels
    }

    pub fn labels(&self, membership: Membership) -> &[usize] {
        match membership {
            Membership::Predicted => &self.predicted_labels,
            Membership::True => &self.true_labels,
        }
    }

    /// Leaf ids of every training instance in tree `tree`.
    #[inline]
    pub fn tree_column(&self, tree: usize) -> &[u32] {
        &self.leaves[tree * self.len..(tree + 1) * self.len]
    }

    pub fn signature(&self, index: usize) -> LeafSignature {
        LeafSignature(
            (0..self.tree_count)
                .map(|t| self.leaves[t * self.len + index])
                .collect(),
        )
    }

    fn check_signature(&self, sig: &LeafSignature) -> Result<()> {
        if sig.len() != self.tree_count {
            return Err(Error::DimensionMismatch {
                what: "leaf signature length",
                expected: self.tree_count,
                actual: sig.len(),
            });
        }
        Ok(())
    }

    /// Per training instance, the number of trees whose leaf differs from `sig`.
    pub fn mismatch_counts(&self, sig: &LeafSignature) -> Result<Vec<u32>> {
        self.check_signature(sig)?;
        let mut counts = vec![0u32; self.len];
        for (t, &leaf) in sig.as_slice().iter().enumerate() {
            for (c, &other) in counts.iter_mut().zip(self.tree_column(t)) {
                *c += u32::from(other != leaf);
            }
        }
        Ok(counts)
    }

    /// Proximity distances from `sig` to every training instance.
    pub fn distance_vector(&self, sig: &LeafSignature) -> Result<DistanceVector> {
        let counts = self.mismatch_counts(sig)?;
        Ok(DistanceVector::from_mismatches(&counts, self.tree_count))
    }

    /// Full N×N proximity-distance matrix, row-major in training order.
    pub fn distance_matrix(&self) -> Vec<Vec<f64>> {
        (0..self.len)
            .into_par_iter()
            .map(|i| {
                self.distance_vector(&self.signature(i))
                    .expect("stored signatures have the store's length")
                    .0
            })
            .collect()
    }
}

/// Similarity of two leaf signatures: shared leaves over tree count.
pub fn proximity(a: &LeafSignature, b: &LeafSignature) -> Result<f64> {
    let differing = a.hamming(b)?;
    if a.is_empty() {
        return Err(Error::InvalidInput("proximity of empty signatures".into()));
    }
    Ok((a.len() - differing) as f64 / a.len() as f64)
}

/// 1 − proximity, computed from the mismatch count.
pub fn proximity_distance(a: &LeafSignature, b: &LeafSignature) -> Result<f64> {
    let differing = a.hamming(b)?;
    if a.is_empty() {
        return Err(Error::InvalidInput("proximity of empty signatures".into()));
    }
    Ok(differing as f64 / a.len() as f64)
}

/// Proximity distances to every training instance, in training order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceVector(pub Vec<f64>);

impl DistanceVector {
    pub fn from_mismatches(counts: &[u32], tree_count: usize) -> Self {
        let t = tree_count as f64;
        DistanceVector(counts.iter().map(|&c| f64::from(c) / t).collect())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }
}

/// Mean of squared distances from `d` to the members of `group` relative to
/// `target_class`, skipping `exclude_index`.
pub fn group_mean_sq_distance(
    d: &DistanceVector,
    store: &ProximityStore,
    target_class: usize,
    group: Group,
    exclude_index: Option<usize>,
    membership: Membership,
) -> Result<f64> {
    if d.len() != store.len() {
        return Err(Error::DimensionMismatch {
            what: "distance vector length",
            expected: store.len(),
            actual: d.len(),
        });
    }
    let labels = store.labels(membership);
    let mut sum = 0.0;
    let mut count = 0usize;
    for (i, (&dist, &label)) in d.0.iter().zip(labels).enumerate() {
        if Some(i) == exclude_index {
            continue;
        }
        let in_group = label == target_class;
        if in_group == (group == Group::In) {
            sum += dist * dist;
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::InvalidInput(format!(
            "the {} group of class {target_class} is empty",
            if group == Group::In { "in" } else { "out" }
        )));
    }
    Ok(sum / count as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OutlierRule {
    /// Flag scores above class mean + `sd_multiplier` × class standard deviation.
    pub sd_multiplier: f64,
    pub membership: Membership,
}

impl Default for OutlierRule {
    fn default() -> Self {
        OutlierRule {
            sd_multiplier: 2.0,
            membership: Membership::Predicted,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutlierScore {
    pub index: usize,
    pub class: usize,
    /// Mean squared proximity distance to the rest of the instance's class.
    pub score: f64,
    pub flagged: bool,
}

/// In-group outlier score for every training instance. The flag threshold is
/// computed within each class from the population standard deviation.
pub fn outlier_scores(store: &ProximityStore, rule: &OutlierRule) -> Result<Vec<OutlierScore>> {
    let labels = store.labels(rule.membership);
    let mut sizes = vec![0usize; store.class_count()];
    labels.iter().for_each(|&c| sizes[c] += 1);
    if let Some(c) = sizes.iter().position(|&s| s == 1) {
        return Err(Error::InvalidInput(format!(
            "class {c} has a single member; outlier scores need at least two"
        )));
    }

    let scores: Vec<f64> = (0..store.len())
        .into_par_iter()
        .map(|i| {
            let d = store.distance_vector(&store.signature(i))?;
            group_mean_sq_distance(&d, store, labels[i], Group::In, Some(i), rule.membership)
        })
        .collect::<Result<_>>()?;

    let mut sum = vec![0.0; store.class_count()];
    for (&s, &c) in scores.iter().zip(labels) {
        sum[c] += s;
    }
    let mean: Vec<f64> = sum
        .iter()
        .zip(&sizes)
        .map(|(&s, &n)| if n == 0 { 0.0 } else { s / n as f64 })
        .collect();
    let mut var = vec![0.0; store.class_count()];
    for (&s, &c) in scores.iter().zip(labels) {
        var[c] += (s - mean[c]).powi(2);
    }
    let threshold: Vec<f64> = (0..store.class_count())
        .map(|c| {
            let sd = if sizes[c] == 0 {
                0.0
            } else {
                (var[c] / sizes[c] as f64).sqrt()
            };
            mean[c] + rule.sd_multiplier * sd
        })
        .collect();

    Ok(scores
        .into_iter()
        .enumerate()
        .map(|(i, score)| OutlierScore {
            index: i,
            class: labels[i],
            score,
            flagged: score > threshold[labels[i]],
        })
        .collect())
}
