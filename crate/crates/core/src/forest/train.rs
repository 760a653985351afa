use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{argmax_lowest, DecisionTree, Forest, TrainConfig, TreeNode};
use crate::dataset::BinaryDataset;
use crate::error::{Error, Result};

/// 1 − Σ p².
pub fn gini_impurity(class_counts: &[u32]) -> Result<f64> {
    let n: u64 = class_counts.iter().map(|&c| u64::from(c)).sum();
    if n == 0 {
        return Err(Error::InvalidInput("Gini impurity of an empty node".into()));
    }
    let n = n as f64;
    Ok(1.0 - class_counts.iter().map(|&c| (f64::from(c) / n).powi(2)).sum::<f64>())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitChoice {
    pub feature: usize,
    pub gain: f64,
}

/// Sum of squared counts, the integer core of the Gini computation.
fn sum_sq(counts: &[u32]) -> u128 {
    counts.iter().map(|&c| u128::from(c) * u128::from(c)).sum()
}

/// Picks the candidate with the largest Gini gain among splits that leave at
/// least `min_leaf_size` samples on each side. Returns `None` when no such
/// candidate has strictly positive gain. Ties go to the lowest feature index.
///
/// Candidates are compared exactly in integer arithmetic: a split's score is
/// Σl²/nl + Σr²/nr, and gain is proportional to that score minus Σp²/n.
pub fn best_split(
    data: &BinaryDataset,
    samples: &[usize],
    candidates: &[usize],
    min_leaf_size: usize,
) -> Option<SplitChoice> {
    if samples.is_empty() {
        return None;
    }
    let k = data.class_count();
    let mut parent = vec![0u32; k];
    for &i in samples {
        parent[data.labels[i]] += 1;
    }
    let n = samples.len() as u128;
    let parent_sq = sum_sq(&parent);
    let min_leaf = min_leaf_size.max(1);

    // (feature, numerator, denominator) of the best score so far
    let mut best: Option<(usize, u128, u128)> = None;
    let mut ordered: Vec<usize> = candidates.to_vec();
    ordered.sort_unstable();
    ordered.dedup();
    let mut right = vec![0u32; k];
    let mut left = vec![0u32; k];
    for &f in &ordered {
        right.iter_mut().for_each(|c| *c = 0);
        for &i in samples {
            if data.vectors[i].get(f) {
                right[data.labels[i]] += 1;
            }
        }
        for c in 0..k {
            left[c] = parent[c] - right[c];
        }
        let nr: u128 = right.iter().map(|&c| u128::from(c)).sum();
        let nl = n - nr;
        if (nl as usize) < min_leaf || (nr as usize) < min_leaf {
            continue;
        }
        let num = sum_sq(&left) * nr + sum_sq(&right) * nl;
        let den = nl * nr;
        // strictly positive gain: num/den > parent_sq/n
        if num * n <= parent_sq * den {
            continue;
        }
        let better = match best {
            None => true,
            Some((_, bn, bd)) => num * bd > bn * den,
        };
        if better {
            best = Some((f, num, den));
        }
    }
    best.map(|(feature, num, den)| {
        let score = num as f64 / den as f64;
        let nf = n as f64;
        SplitChoice {
            feature,
            gain: (score - parent_sq as f64 / nf) / nf,
        }
    })
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Independent stream seed for tree `tree_index`.
pub(crate) fn tree_seed(seed: u64, tree_index: usize) -> u64 {
    splitmix64(seed ^ splitmix64(tree_index as u64))
}

struct TreeBuilder<'a> {
    data: &'a BinaryDataset,
    config: &'a TrainConfig,
    subset_size: usize,
    rng: ChaCha8Rng,
    nodes: Vec<TreeNode>,
    next_leaf: u32,
    on_path: Vec<bool>,
}

impl TreeBuilder<'_> {
    fn leaf(&mut self, samples: &[usize]) -> usize {
        let mut counts = vec![0u32; self.data.class_count()];
        for &i in samples {
            counts[self.data.labels[i]] += 1;
        }
        let majority = argmax_lowest(&counts);
        self.nodes.push(TreeNode::Leaf {
            leaf_id: self.next_leaf,
            class_counts: counts,
            majority,
        });
        self.next_leaf += 1;
        self.nodes.len() - 1
    }

    fn build(&mut self, samples: Vec<usize>, depth: usize) -> Result<usize> {
        let first = self.data.labels[samples[0]];
        let pure = samples.iter().all(|&i| self.data.labels[i] == first);
        let depth_capped = self.config.max_depth.is_some_and(|d| depth >= d);
        if pure || depth_capped || samples.len() < 2 * self.config.min_leaf_size {
            return Ok(self.leaf(&samples));
        }

        let f = self.data.feature_count();
        let candidates = sample(&mut self.rng, f, self.subset_size).into_vec();
        let Some(choice) = best_split(self.data, &samples, &candidates, self.config.min_leaf_size) else {
            return Ok(self.leaf(&samples));
        };
        if self.on_path[choice.feature] {
            return Err(Error::Invariant(format!(
                "feature {} split twice on one path",
                choice.feature
            )));
        }

        let (right_s, left_s): (Vec<usize>, Vec<usize>) = samples
            .into_iter()
            .partition(|&i| self.data.vectors[i].get(choice.feature));
        let at = self.nodes.len();
        self.nodes.push(TreeNode::Split {
            feature: choice.feature,
            left: 0,
            right: 0,
        });
        self.on_path[choice.feature] = true;
        let left = self.build(left_s, depth + 1)?;
        let right = self.build(right_s, depth + 1)?;
        self.on_path[choice.feature] = false;
        self.nodes[at] = TreeNode::Split {
            feature: choice.feature,
            left,
            right,
        };
        Ok(at)
    }
}

fn build_tree(
    data: &BinaryDataset,
    config: &TrainConfig,
    subset_size: usize,
    tree_index: usize,
) -> Result<DecisionTree> {
    let mut rng = ChaCha8Rng::seed_from_u64(tree_seed(config.seed, tree_index));
    let n = data.len();
    let bootstrap: Vec<usize> = (0..n).map(|_| rng.gen_range(0..n)).collect();
    let mut builder = TreeBuilder {
        data,
        config,
        subset_size,
        rng,
        nodes: Vec::new(),
        next_leaf: 0,
        on_path: vec![false; data.feature_count()],
    };
    builder.build(bootstrap, 0)?;
    Ok(DecisionTree {
        leaf_count: builder.next_leaf as usize,
        nodes: builder.nodes,
    })
}

/// Trains a forest of bootstrapped CART trees. Trees are built in parallel
/// from per-tree random streams, so the result depends only on `data` and
/// `config`.
pub fn train(data: &BinaryDataset, config: &TrainConfig) -> Result<Forest> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let f = data.feature_count();
    if f == 0 {
        return Err(Error::InvalidInput("dataset has no features".into()));
    }
    let mut present = vec![false; data.class_count()];
    data.labels.iter().for_each(|&y| present[y] = true);
    if present.iter().filter(|&&p| p).count() < 2 {
        return Err(Error::InvalidInput(
            "training data must contain at least two classes".into(),
        ));
    }
    if config.tree_count == 0 {
        return Err(Error::InvalidInput("tree_count must be positive".into()));
    }
    if config.min_leaf_size == 0 {
        return Err(Error::InvalidInput("min_leaf_size must be positive".into()));
    }
    if config.max_depth == Some(0) {
        return Err(Error::InvalidInput("max_depth must be positive".into()));
    }
    let subset_size = config.feature_subset.resolve(f)?;

    let trees = (0..config.tree_count)
        .into_par_iter()
        .map(|t| build_tree(data, config, subset_size, t))
        .collect::<Result<Vec<_>>>()?;

    Ok(Forest {
        trees,
        config: *config,
        class_count: data.class_count(),
        spec: data.spec.clone(),
        train_size: data.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::BinaryVector;
    use crate::forest::FeatureSubset;

    fn dataset(rows: &[(&str, usize)], classes: usize) -> BinaryDataset {
        let vectors = rows.iter().map(|(b, _)| b.parse::<BinaryVector>().unwrap()).collect();
        let labels = rows.iter().map(|&(_, y)| y).collect();
        BinaryDataset::from_bits(vectors, labels, classes).unwrap()
    }

    #[test]
    fn gini_values() {
        assert_eq!(gini_impurity(&[7, 0]).unwrap(), 0.0);
        assert_eq!(gini_impurity(&[5, 5]).unwrap(), 0.5);
        assert!((gini_impurity(&[1, 3]).unwrap() - 0.375).abs() < 1e-15);
        assert!(gini_impurity(&[0, 0]).is_err());
    }

    #[test]
    fn best_split_on_two_samples() {
        let d = dataset(&[("0", 0), ("1", 1)], 2);
        let s = best_split(&d, &[0, 1], &[0], 1).unwrap();
        assert_eq!(s.feature, 0);
        assert!((s.gain - 0.5).abs() < 1e-15);
    }

    #[test]
    fn pure_sample_has_no_split() {
        let d = dataset(&[("0 1", 1), ("1 0", 1), ("1 1", 1)], 2);
        assert_eq!(best_split(&d, &[0, 1, 2], &[0, 1], 1), None);
    }

    #[test]
    fn ties_go_to_lowest_feature() {
        // features 1 and 3 are identical copies of the label
        let d = dataset(&[("0 0 0 0", 0), ("0 1 0 1", 1), ("1 0 0 0", 0), ("1 1 0 1", 1)], 2);
        let s = best_split(&d, &[0, 1, 2, 3], &[3, 1, 0], 1).unwrap();
        assert_eq!(s.feature, 1);
    }

    #[test]
    fn min_leaf_excludes_lopsided_splits() {
        let d = dataset(&[("1 0", 1), ("0 0", 0), ("0 1", 0), ("0 1", 0)], 2);
        // feature 0 isolates a single sample
        assert_eq!(best_split(&d, &[0, 1, 2, 3], &[0], 1).unwrap().feature, 0);
        assert_eq!(best_split(&d, &[0, 1, 2, 3], &[0], 2), None);
    }

    #[test]
    fn zero_gain_split_rejected() {
        // feature 0 splits 50/50 into halves with the parent's distribution
        let d = dataset(&[("0", 0), ("0", 1), ("1", 0), ("1", 1)], 2);
        assert_eq!(best_split(&d, &[0, 1, 2, 3], &[0], 1), None);
    }

    fn separable(n: usize) -> BinaryDataset {
        let rows: Vec<(String, usize)> = (0..n)
            .map(|i| {
                let bits = format!("{} {} {}", i % 2, (i / 2) % 2, (i / 4) % 2);
                (bits, i % 2)
            })
            .collect();
        let refs: Vec<(&str, usize)> = rows.iter().map(|(s, y)| (s.as_str(), *y)).collect();
        dataset(&refs, 2)
    }

    #[test]
    fn separable_toy_is_learned_exactly() {
        let d = separable(16);
        let cfg = TrainConfig {
            tree_count: 10,
            seed: 4,
            ..TrainConfig::default()
        };
        let f = train(&d, &cfg).unwrap();
        assert_eq!(f.accuracy(&d).unwrap(), 1.0);
        // flipping the decisive feature flips the prediction
        let v = &d.vectors[0];
        let before = f.predict(v).unwrap().class;
        let after = f.predict(&v.flipped(0).unwrap()).unwrap().class;
        assert_ne!(before, after);
    }

    #[test]
    fn leaf_counts_cover_bootstrap() {
        let d = separable(24);
        let cfg = TrainConfig {
            tree_count: 7,
            feature_subset: FeatureSubset::Count(3),
            seed: 11,
            ..TrainConfig::default()
        };
        let f = train(&d, &cfg).unwrap();
        for t in &f.trees {
            t.validate(3, 2).unwrap();
            let total: u32 = t
                .nodes
                .iter()
                .map(|n| match n {
                    TreeNode::Leaf { class_counts, .. } => class_counts.iter().sum(),
                    TreeNode::Split { .. } => 0,
                })
                .sum();
            assert_eq!(total as usize, d.len());
        }
    }

    #[test]
    fn training_is_deterministic_and_seed_sensitive() {
        let d = separable(32);
        let cfg = TrainConfig {
            tree_count: 12,
            feature_subset: FeatureSubset::Count(1),
            seed: 1,
            ..TrainConfig::default()
        };
        let a = train(&d, &cfg).unwrap();
        let b = train(&d, &cfg).unwrap();
        assert_eq!(a, b);
        let c = train(&d, &TrainConfig { seed: 2, ..cfg }).unwrap();
        assert_ne!(a.trees, c.trees);
    }

    #[test]
    fn train_rejects_bad_inputs() {
        let one_class = dataset(&[("0", 0), ("1", 0)], 2);
        assert!(train(&one_class, &TrainConfig::default()).is_err());
        let d = separable(8);
        for cfg in [
            TrainConfig {
                tree_count: 0,
                ..TrainConfig::default()
            },
            TrainConfig {
                min_leaf_size: 0,
                ..TrainConfig::default()
            },
            TrainConfig {
                max_depth: Some(0),
                ..TrainConfig::default()
            },
            TrainConfig {
                feature_subset: FeatureSubset::Count(4),
                ..TrainConfig::default()
            },
        ] {
            assert!(train(&d, &cfg).is_err(), "{cfg:?}");
        }
    }

    #[test]
    fn max_depth_caps_trees() {
        let d = separable(32);
        let cfg = TrainConfig {
            tree_count: 5,
            max_depth: Some(1),
            feature_subset: FeatureSubset::Count(3),
            ..TrainConfig::default()
        };
        let f = train(&d, &cfg).unwrap();
        assert!(f.trees.iter().all(|t| t.nodes.len() <= 3));
    }
}
