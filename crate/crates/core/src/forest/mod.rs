//! CART Random Forests over binary feature vectors.
//!
//! Trees are stored as flat node arrays in preorder. Each leaf carries a
//! tree-local `leaf_id` assigned in preorder, which is what leaf signatures
//! (and therefore proximities) are built from.

mod model;
mod train;

use serde::{Deserialize, Serialize};

use crate::dataset::{BinarizationSpec, BinaryVector};
use crate::error::{Error, Result};

pub use model::FORMAT_VERSION;
pub use train::{best_split, gini_impurity, train, SplitChoice};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TreeNode {
    /// Samples with the feature at 0 go `left`, at 1 go `right`.
    Split { feature: usize, left: usize, right: usize },
    Leaf {
        leaf_id: u32,
        class_counts: Vec<u32>,
        majority: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DecisionTree {
    pub nodes: Vec<TreeNode>,
    pub leaf_count: usize,
}

impl DecisionTree {
    /// Index of the leaf node reached when feature `j` reads `bit(j)`.
    #[inline]
    pub fn leaf_node_by(&self, bit: impl Fn(usize) -> bool) -> usize {
        let mut at = 0;
        loop {
            match &self.nodes[at] {
                TreeNode::Split { feature, left, right } => {
                    at = if bit(*feature) { *right } else { *left };
                }
                TreeNode::Leaf { .. } => return at,
            }
        }
    }

    #[inline]
    pub fn leaf_id_by(&self, bit: impl Fn(usize) -> bool) -> u32 {
        match &self.nodes[self.leaf_node_by(bit)] {
            TreeNode::Leaf { leaf_id, .. } => *leaf_id,
            TreeNode::Split { .. } => unreachable!("leaf_node_by stops at leaves"),
        }
    }

    pub fn leaf_id(&self, v: &BinaryVector) -> u32 {
        self.leaf_id_by(|j| v.get(j))
    }

    /// Majority class of the leaf reached by `v`.
    pub fn vote(&self, v: &BinaryVector) -> usize {
        match &self.nodes[self.leaf_node_by(|j| v.get(j))] {
            TreeNode::Leaf { majority, .. } => *majority,
            TreeNode::Split { .. } => unreachable!(),
        }
    }

    /// Features tested on the root-to-leaf path of `v`, in path order.
    pub fn path_features(&self, v: &BinaryVector) -> Vec<usize> {
        let mut out = Vec::new();
        let mut at = 0;
        while let TreeNode::Split { feature, left, right } = &self.nodes[at] {
            out.push(*feature);
            at = if v.get(*feature) { *right } else { *left };
        }
        out
    }

    /// Every feature tested anywhere in the tree, ascending.
    pub fn split_features(&self) -> Vec<usize> {
        let mut fs: Vec<usize> = self
            .nodes
            .iter()
            .filter_map(|n| match n {
                TreeNode::Split { feature, .. } => Some(*feature),
                TreeNode::Leaf { .. } => None,
            })
            .collect();
        fs.sort_unstable();
        fs.dedup();
        fs
    }

    /// Checks the structural invariants: preorder layout, each non-root node
    /// referenced once, valid features and class vectors, preorder leaf ids.
    pub fn validate(&self, feature_count: usize, class_count: usize) -> Result<()> {
        let bad = |msg: String| Err(Error::CorruptModel(msg));
        if self.nodes.is_empty() {
            return bad("tree has no nodes".into());
        }
        let mut referenced = vec![false; self.nodes.len()];
        let mut next_leaf = 0u32;
        // walk in preorder; node indices must also be preorder
        let mut stack = vec![0usize];
        let mut expected_index = 0usize;
        while let Some(at) = stack.pop() {
            if at != expected_index {
                return bad(format!("node {at} is out of preorder position {expected_index}"));
            }
            expected_index += 1;
            match &self.nodes[at] {
                TreeNode::Split { feature, left, right } => {
                    if *feature >= feature_count {
                        return bad(format!("node {at} tests feature {feature} >= {feature_count}"));
                    }
                    for &c in [left, right] {
                        if c <= at || c >= self.nodes.len() || referenced[c] {
                            return bad(format!("node {at} has invalid child {c}"));
                        }
                        referenced[c] = true;
                    }
                    stack.push(*right);
                    stack.push(*left);
                }
                TreeNode::Leaf {
                    leaf_id,
                    class_counts,
                    majority,
                } => {
                    if *leaf_id != next_leaf {
                        return bad(format!("leaf ids out of preorder at node {at}"));
                    }
                    next_leaf += 1;
                    if class_counts.len() != class_count || class_counts.iter().all(|&c| c == 0) {
                        return bad(format!("leaf at node {at} has invalid class counts"));
                    }
                    if *majority != argmax_lowest(class_counts) {
                        return bad(format!("leaf at node {at} has inconsistent majority"));
                    }
                }
            }
        }
        if expected_index != self.nodes.len() {
            return bad("tree contains unreachable nodes".into());
        }
        if next_leaf as usize != self.leaf_count {
            return bad("leaf count mismatch".into());
        }
        Ok(())
    }
}

/// Index of the largest count; ties go to the lowest index.
pub(crate) fn argmax_lowest<T: PartialOrd + Copy>(values: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// How many features to draw as split candidates at each node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "SubsetRepr", into = "SubsetRepr")]
pub enum FeatureSubset {
    /// floor(sqrt(F)), at least 1.
    Sqrt,
    Count(usize),
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum SubsetRepr {
    Name(String),
    Count(usize),
}

impl TryFrom<SubsetRepr> for FeatureSubset {
    type Error = String;

    fn try_from(r: SubsetRepr) -> std::result::Result<Self, String> {
        match r {
            SubsetRepr::Name(s) if s == "sqrt" => Ok(FeatureSubset::Sqrt),
            SubsetRepr::Name(s) => Err(format!("unknown feature subset {s:?}")),
            SubsetRepr::Count(n) => Ok(FeatureSubset::Count(n)),
        }
    }
}

impl From<FeatureSubset> for SubsetRepr {
    fn from(f: FeatureSubset) -> Self {
        match f {
            FeatureSubset::Sqrt => SubsetRepr::Name("sqrt".into()),
            FeatureSubset::Count(n) => SubsetRepr::Count(n),
        }
    }
}

impl FeatureSubset {
    pub fn resolve(self, feature_count: usize) -> Result<usize> {
        match self {
            FeatureSubset::Sqrt => Ok(((feature_count as f64).sqrt().floor() as usize).max(1)),
            FeatureSubset::Count(n) if n >= 1 && n <= feature_count => Ok(n),
            FeatureSubset::Count(n) => Err(Error::InvalidInput(format!(
                "feature subset size {n} must lie in 1..={feature_count}"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub tree_count: usize,
    pub feature_subset: FeatureSubset,
    /// `None` grows trees until another stop rule applies.
    pub max_depth: Option<usize>,
    pub min_leaf_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            tree_count: 100,
            feature_subset: FeatureSubset::Sqrt,
            max_depth: None,
            min_leaf_size: 1,
            seed: 0,
        }
    }
}

/// Per-tree leaf ids of one instance, in tree order.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LeafSignature(pub Vec<u32>);

impl LeafSignature {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[u32] {
        &self.0
    }

    /// Number of trees in which the two signatures land in different leaves.
    pub fn hamming(&self, other: &LeafSignature) -> Result<usize> {
        if self.len() != other.len() {
            return Err(Error::DimensionMismatch {
                what: "leaf signature length",
                expected: self.len(),
                actual: other.len(),
            });
        }
        Ok(self.0.iter().zip(&other.0).filter(|(a, b)| a != b).count())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prediction {
    pub class: usize,
    /// One vote per tree, indexed by class.
    pub votes: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Forest {
    pub trees: Vec<DecisionTree>,
    pub config: TrainConfig,
    pub class_count: usize,
    pub spec: BinarizationSpec,
    pub train_size: usize,
}

impl Forest {
    pub fn feature_count(&self) -> usize {
        self.spec.derived_count()
    }

    pub fn tree_count(&self) -> usize {
        self.trees.len()
    }

    pub(crate) fn check_len(&self, v: &BinaryVector) -> Result<()> {
        if v.len() != self.feature_count() {
            return Err(Error::DimensionMismatch {
                what: "feature vector length",
                expected: self.feature_count(),
                actual: v.len(),
            });
        }
        Ok(())
    }

    pub fn check_class(&self, class: usize) -> Result<()> {
        if class >= self.class_count {
            return Err(Error::UnknownClass {
                class,
                class_count: self.class_count,
            });
        }
        Ok(())
    }

    /// Majority vote over trees; ties go to the lowest class id.
    pub fn predict(&self, v: &BinaryVector) -> Result<Prediction> {
        self.check_len(v)?;
        let mut votes = vec![0u32; self.class_count];
        for tree in &self.trees {
            votes[tree.vote(v)] += 1;
        }
        Ok(Prediction {
            class: argmax_lowest(&votes),
            votes,
        })
    }

    pub fn leaf_signature(&self, v: &BinaryVector) -> Result<LeafSignature> {
        self.check_len(v)?;
        Ok(LeafSignature(self.trees.iter().map(|t| t.leaf_id(v)).collect()))
    }

    /// Fraction of `data` rows whose predicted class equals the label.
    pub fn accuracy(&self, data: &crate::dataset::BinaryDataset) -> Result<f64> {
        let mut correct = 0usize;
        for (v, &y) in data.vectors.iter().zip(&data.labels) {
            if self.predict(v)?.class == y {
                correct += 1;
            }
        }
        Ok(correct as f64 / data.len() as f64)
    }
}
