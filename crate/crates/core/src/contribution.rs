//! Per-feature contribution and closeness by single-bit permutation.
//!
//! For an instance `v` and feature `k`, `v'` is `v` with bit `k` flipped.
//! Both are routed through the forest and placed in the training
//! proximity-distance space, giving distance vectors `d` and `d'`. With the
//! in-group vector `z` (−1 for training instances of the target class, +1
//! otherwise) and `Δ = d − d'`, the contribution of `k` is `Σ z·Δ·|Δ|`.
//! It is positive when the original value of `k` held `v` closer to the
//! target class than the flipped value does.
//!
//! Distances are kept as integer mismatch counts (`d = m / T`), so the
//! contribution is computed exactly as `Σ z·δ·|δ| / T²` with `δ = m − m'`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::BinaryVector;
use crate::error::{Error, Result};
use crate::forest::{Forest, LeafSignature};
use crate::proximity::{group_mean_sq_distance, DistanceVector, Group, Membership, ProximityStore};

/// Copy of `v` with bit `k` inverted.
pub fn flip(v: &BinaryVector, k: usize) -> Result<BinaryVector> {
    v.flipped(k)
}

/// ±1 labelling of training instances relative to a target class.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InGroupVector {
    pub values: Vec<i8>,
    pub target_class: usize,
}

/// −1 where the training instance's label equals `target_class`, +1 elsewhere.
pub fn ingroup_vector(store: &ProximityStore, target_class: usize, membership: Membership) -> Result<InGroupVector> {
    if target_class >= store.class_count() {
        return Err(Error::UnknownClass {
            class: target_class,
            class_count: store.class_count(),
        });
    }
    let values = store
        .labels(membership)
        .iter()
        .map(|&c| if c == target_class { -1 } else { 1 })
        .collect();
    Ok(InGroupVector { values, target_class })
}

/// Mean squared distances to the in- and out-group before and after a flip.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Closeness {
    pub in_before: f64,
    pub out_before: f64,
    pub in_after: f64,
    pub out_after: f64,
    pub delta_in: f64,
    pub delta_out: f64,
}

impl Closeness {
    fn new(before: (f64, f64), after: (f64, f64)) -> Self {
        Closeness {
            in_before: before.0,
            out_before: before.1,
            in_after: after.0,
            out_after: after.1,
            delta_in: after.0 - before.0,
            delta_out: after.1 - before.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureContribution {
    pub feature_index: usize,
    pub name: String,
    pub contribution: f64,
    pub closeness: Closeness,
    /// Trees whose leaf changes under the flip.
    pub changed_tree_count: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContributionReport {
    pub model_id: String,
    pub instance_id: String,
    pub input: BinaryVector,
    pub predicted_class: usize,
    pub target_class: usize,
    pub votes: Vec<u32>,
    pub normalized: bool,
    pub features: Vec<FeatureContribution>,
}

impl ContributionReport {
    pub fn contributions(&self) -> Vec<f64> {
        self.features.iter().map(|f| f.contribution).collect()
    }

    pub fn with_ids(mut self, model_id: impl Into<String>, instance_id: impl Into<String>) -> Self {
        self.model_id = model_id.into();
        self.instance_id = instance_id.into();
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExplainOptions {
    /// Divide contributions by the training-set size.
    pub normalize: bool,
    pub parallel: bool,
    pub membership: Membership,
    /// Training index of the explained instance, left out of every sum.
    pub exclude_index: Option<usize>,
}

impl Default for ExplainOptions {
    fn default() -> Self {
        ExplainOptions {
            normalize: false,
            parallel: true,
            membership: Membership::Predicted,
            exclude_index: None,
        }
    }
}

/// Route of one instance through every tree: its signature and, per
/// feature, the trees whose root-to-leaf path tests that feature.
#[derive(Debug, Clone)]
pub struct PathContext {
    vector: BinaryVector,
    signature: LeafSignature,
    trees_by_feature: Vec<Vec<u32>>,
}

impl PathContext {
    pub fn new(forest: &Forest, v: &BinaryVector) -> Result<Self> {
        let signature = forest.leaf_signature(v)?;
        let mut trees_by_feature = vec![Vec::new(); forest.feature_count()];
        for (t, tree) in forest.trees.iter().enumerate() {
            for f in tree.path_features(v) {
                trees_by_feature[f].push(t as u32);
            }
        }
        Ok(PathContext {
            vector: v.clone(),
            signature,
            trees_by_feature,
        })
    }

    pub fn signature(&self) -> &LeafSignature {
        &self.signature
    }

    /// Trees whose path for the context vector tests feature `k`.
    pub fn affected_trees(&self, k: usize) -> &[u32] {
        &self.trees_by_feature[k]
    }
}

/// Signature of `flip(v, k)`, re-descending only the trees whose path for `v`
/// tests `k`.
pub fn fast_leaf_signature(forest: &Forest, ctx: &PathContext, v: &BinaryVector, k: usize) -> Result<LeafSignature> {
    if *v != ctx.vector {
        return Err(Error::StaleContext);
    }
    if k >= v.len() {
        return Err(Error::OutOfRange {
            what: "feature vector",
            index: k,
            len: v.len(),
        });
    }
    let mut sig = ctx.signature.clone();
    for (t, leaf) in rerouted(forest, ctx, k) {
        sig.0[t] = leaf;
    }
    Ok(sig)
}

/// (tree, new leaf) for every tree affected by flipping `k`.
fn rerouted<'a>(forest: &'a Forest, ctx: &'a PathContext, k: usize) -> impl Iterator<Item = (usize, u32)> + 'a {
    let v = &ctx.vector;
    ctx.trees_by_feature[k].iter().map(move |&t| {
        let t = t as usize;
        (t, forest.trees[t].leaf_id_by(|j| v.get(j) ^ (j == k)))
    })
}

/// Everything about `v` that does not depend on the flipped feature.
struct Baseline<'a> {
    forest: &'a Forest,
    store: &'a ProximityStore,
    ctx: PathContext,
    mismatches: Vec<u32>,
    z: InGroupVector,
    before: (f64, f64),
    options: ExplainOptions,
}

impl<'a> Baseline<'a> {
    fn new(
        forest: &'a Forest,
        store: &'a ProximityStore,
        v: &BinaryVector,
        target_class: usize,
        options: ExplainOptions,
    ) -> Result<Self> {
        forest.check_class(target_class)?;
        if store.tree_count() != forest.tree_count() {
            return Err(Error::DimensionMismatch {
                what: "store tree count",
                expected: forest.tree_count(),
                actual: store.tree_count(),
            });
        }
        if let Some(i) = options.exclude_index {
            if i >= store.len() {
                return Err(Error::OutOfRange {
                    what: "training set",
                    index: i,
                    len: store.len(),
                });
            }
        }
        let ctx = PathContext::new(forest, v)?;
        let mismatches = store.mismatch_counts(&ctx.signature)?;
        let z = ingroup_vector(store, target_class, options.membership)?;
        let d = DistanceVector::from_mismatches(&mismatches, store.tree_count());
        let before = group_means(&d, store, target_class, &options)?;
        Ok(Baseline {
            forest,
            store,
            ctx,
            mismatches,
            z,
            before,
            options,
        })
    }

    fn evaluate(&self, k: usize, name: &str) -> Result<FeatureContribution> {
        let old = &self.ctx.signature.0;
        let changes: Vec<(usize, u32)> = rerouted(self.forest, &self.ctx, k)
            .filter(|&(t, leaf)| leaf != old[t])
            .collect();

        if changes.is_empty() {
            return Ok(FeatureContribution {
                feature_index: k,
                name: name.to_string(),
                contribution: 0.0,
                closeness: Closeness::new(self.before, self.before),
                changed_tree_count: 0,
            });
        }

        let mut flipped = self.mismatches.clone();
        for &(t, new_leaf) in &changes {
            let old_leaf = old[t];
            for (m, &leaf) in flipped.iter_mut().zip(self.store.tree_column(t)) {
                // leaf == old_leaf: was shared, now differs; leaf == new_leaf: the reverse
                if leaf == old_leaf {
                    *m += 1;
                } else if leaf == new_leaf {
                    *m -= 1;
                }
            }
        }

        let mut total: i64 = 0;
        for (i, ((&m, &m_flip), &z)) in self.mismatches.iter().zip(&flipped).zip(&self.z.values).enumerate() {
            if Some(i) == self.options.exclude_index {
                continue;
            }
            let delta = i64::from(m) - i64::from(m_flip);
            total += i64::from(z) * delta * delta.abs();
        }
        let t = self.store.tree_count() as f64;
        let mut contribution = total as f64 / (t * t);
        if self.options.normalize {
            contribution /= self.store.len() as f64;
        }

        let d_flip = DistanceVector::from_mismatches(&flipped, self.store.tree_count());
        let after = group_means(&d_flip, self.store, self.z.target_class, &self.options)?;
        Ok(FeatureContribution {
            feature_index: k,
            name: name.to_string(),
            contribution,
            closeness: Closeness::new(self.before, after),
            changed_tree_count: changes.len(),
        })
    }
}

fn group_means(
    d: &DistanceVector,
    store: &ProximityStore,
    target: usize,
    options: &ExplainOptions,
) -> Result<(f64, f64)> {
    let inside = group_mean_sq_distance(d, store, target, Group::In, options.exclude_index, options.membership)?;
    let outside = group_mean_sq_distance(d, store, target, Group::Out, options.exclude_index, options.membership)?;
    Ok((inside, outside))
}

fn feature_name(forest: &Forest, k: usize) -> &str {
    forest.spec.derived_feature_names.get(k).map_or("", String::as_str)
}

/// Contribution and closeness of feature `k` for instance `v`.
pub fn feature_contribution(
    forest: &Forest,
    store: &ProximityStore,
    v: &BinaryVector,
    k: usize,
    target_class: usize,
    options: &ExplainOptions,
) -> Result<FeatureContribution> {
    if k >= v.len() {
        return Err(Error::OutOfRange {
            what: "feature vector",
            index: k,
            len: v.len(),
        });
    }
    let base = Baseline::new(forest, store, v, target_class, *options)?;
    base.evaluate(k, feature_name(forest, k))
}

/// Contributions of every feature of `v`. `target_class` defaults to the
/// forest's prediction for `v`.
pub fn explain(
    forest: &Forest,
    store: &ProximityStore,
    v: &BinaryVector,
    target_class: Option<usize>,
    options: &ExplainOptions,
) -> Result<ContributionReport> {
    let prediction = forest.predict(v)?;
    let target = target_class.unwrap_or(prediction.class);
    let base = Baseline::new(forest, store, v, target, *options)?;
    let eval = |k: usize| base.evaluate(k, feature_name(forest, k));
    let features = if options.parallel {
        (0..v.len()).into_par_iter().map(eval).collect::<Result<Vec<_>>>()?
    } else {
        (0..v.len()).map(eval).collect::<Result<Vec<_>>>()?
    };
    Ok(ContributionReport {
        model_id: String::new(),
        instance_id: String::new(),
        input: v.clone(),
        predicted_class: prediction.class,
        target_class: target,
        votes: prediction.votes,
        normalized: options.normalize,
        features,
    })
}

/// Per-feature squared difference between a report targeting the wrong
/// (predicted) class and one targeting the right class.
pub fn misclassification_diff(wrong: &ContributionReport, right: &ContributionReport) -> Result<Vec<f64>> {
    if wrong.features.len() != right.features.len() {
        return Err(Error::DimensionMismatch {
            what: "report feature count",
            expected: wrong.features.len(),
            actual: right.features.len(),
        });
    }
    if wrong.instance_id != right.instance_id || wrong.input != right.input {
        return Err(Error::InvalidInput("reports describe different instances".into()));
    }
    Ok(wrong
        .features
        .iter()
        .zip(&right.features)
        .map(|(a, b)| (a.contribution - b.contribution).powi(2))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::BinaryDataset;
    use crate::forest::{train, FeatureSubset, TrainConfig};
    use crate::proximity::build_store;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_vectors(n: usize, f: usize, rng: &mut ChaCha8Rng) -> Vec<BinaryVector> {
        (0..n)
            .map(|_| BinaryVector::from_bools(&(0..f).map(|_| rng.gen_bool(0.5)).collect::<Vec<_>>()))
            .collect()
    }

    fn decisive_setup(seed: u64) -> (Forest, BinaryDataset, ProximityStore) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let vectors = random_vectors(60, 6, &mut rng);
        let labels = vectors.iter().map(|v| usize::from(v.get(0))).collect();
        let data = BinaryDataset::from_bits(vectors, labels, 2).unwrap();
        let forest = train(
            &data,
            &TrainConfig {
                tree_count: 20,
                seed,
                ..TrainConfig::default()
            },
        )
        .unwrap();
        let store = build_store(&forest, &data).unwrap();
        (forest, data, store)
    }

    /// Straight from the definition: full traversal, float distances.
    fn oracle_contribution(forest: &Forest, store: &ProximityStore, v: &BinaryVector, k: usize, target: usize) -> f64 {
        let d = store.distance_vector(&forest.leaf_signature(v).unwrap()).unwrap();
        let vf = v.flipped(k).unwrap();
        let d2 = store.distance_vector(&forest.leaf_signature(&vf).unwrap()).unwrap();
        d.0.iter()
            .zip(&d2.0)
            .zip(store.predicted_labels())
            .map(|((a, b), &c)| {
                let z = if c == target { -1.0 } else { 1.0 };
                let delta = a - b;
                z * delta * delta.abs()
            })
            .sum()
    }

    #[test]
    fn flip_definition() {
        let v: BinaryVector = "0 1 0".parse().unwrap();
        assert_eq!(flip(&v, 0).unwrap().to_bit_string(), "110");
        assert_eq!(flip(&flip(&v, 2).unwrap(), 2).unwrap(), v);
        assert!(flip(&v, 3).is_err());
    }

    #[test]
    fn ingroup_vector_cases() {
        let (_, _, store) = decisive_setup(1);
        let z = ingroup_vector(&store, 0, Membership::Predicted).unwrap();
        assert_eq!(z.values.len(), store.len());
        for (&zi, &c) in z.values.iter().zip(store.predicted_labels()) {
            assert_eq!(zi, if c == 0 { -1 } else { 1 });
        }
        assert!(ingroup_vector(&store, 2, Membership::Predicted).is_err());
    }

    #[test]
    fn matches_definition_oracle() {
        let (forest, data, store) = decisive_setup(2);
        let opts = ExplainOptions::default();
        for v in data.vectors.iter().take(10) {
            for target in 0..2 {
                let report = explain(&forest, &store, v, Some(target), &opts).unwrap();
                for fc in &report.features {
                    let expected = oracle_contribution(&forest, &store, v, fc.feature_index, target);
                    assert!((fc.contribution - expected).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn decisive_feature_dominates() {
        let (forest, data, store) = decisive_setup(3);
        let opts = ExplainOptions::default();
        for (v, &y) in data.vectors.iter().zip(&data.labels) {
            let report = explain(&forest, &store, v, None, &opts).unwrap();
            assert_eq!(report.predicted_class, y);
            let c = report.contributions();
            assert!(c[0] > 0.0);
            assert!(c[1..].iter().all(|x| x.abs() < c[0]));
        }
    }

    #[test]
    fn untested_feature_is_zero() {
        let (forest, data, store) = decisive_setup(4);
        let used: std::collections::BTreeSet<usize> = forest.trees.iter().flat_map(|t| t.split_features()).collect();
        let v = &data.vectors[0];
        let report = explain(&forest, &store, v, None, &ExplainOptions::default()).unwrap();
        for fc in &report.features {
            if !used.contains(&fc.feature_index) {
                assert_eq!(fc.contribution, 0.0);
                assert_eq!(fc.changed_tree_count, 0);
                assert_eq!(fc.closeness.delta_in, 0.0);
                assert_eq!(fc.closeness.delta_out, 0.0);
            }
        }
    }

    #[test]
    fn antisymmetry_under_preserved_prediction() {
        let (forest, _, store) = decisive_setup(5);
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let opts = ExplainOptions::default();
        let mut checked = 0;
        for v in random_vectors(30, 6, &mut rng) {
            for k in 0..6 {
                let vf = v.flipped(k).unwrap();
                let c = forest.predict(&v).unwrap().class;
                if forest.predict(&vf).unwrap().class != c {
                    continue;
                }
                let a = feature_contribution(&forest, &store, &v, k, c, &opts).unwrap();
                let b = feature_contribution(&forest, &store, &vf, k, c, &opts).unwrap();
                assert_eq!(a.contribution, -b.contribution);
                checked += 1;
            }
        }
        assert!(checked > 50);
    }

    #[test]
    fn fast_path_matches_full_traversal() {
        let (forest, _, _) = decisive_setup(6);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for v in random_vectors(20, 6, &mut rng) {
            let ctx = PathContext::new(&forest, &v).unwrap();
            for k in 0..6 {
                let fast = fast_leaf_signature(&forest, &ctx, &v, k).unwrap();
                let naive = forest.leaf_signature(&v.flipped(k).unwrap()).unwrap();
                assert_eq!(fast, naive);
                let anywhere = forest.trees.iter().filter(|t| t.split_features().contains(&k)).count();
                assert!(ctx.affected_trees(k).len() <= anywhere);
            }
            let other = v.flipped(0).unwrap();
            assert!(matches!(
                fast_leaf_signature(&forest, &ctx, &other, 1),
                Err(Error::StaleContext)
            ));
        }
    }

    #[test]
    fn default_target_equals_predicted_target() {
        let (forest, data, store) = decisive_setup(7);
        let v = &data.vectors[5];
        let opts = ExplainOptions::default();
        let a = explain(&forest, &store, v, None, &opts).unwrap();
        let b = explain(&forest, &store, v, Some(a.predicted_class), &opts).unwrap();
        assert_eq!(a, b);
        let serial = explain(
            &forest,
            &store,
            v,
            None,
            &ExplainOptions {
                parallel: false,
                ..opts
            },
        )
        .unwrap();
        assert_eq!(a, serial);
    }

    #[test]
    fn bounds_hold() {
        let (forest, data, store) = decisive_setup(9);
        let report = explain(&forest, &store, &data.vectors[0], Some(1), &ExplainOptions::default()).unwrap();
        for fc in &report.features {
            assert!(fc.contribution.abs() <= store.len() as f64);
            let cl = fc.closeness;
            for x in [cl.in_before, cl.out_before, cl.in_after, cl.out_after] {
                assert!((0.0..=1.0).contains(&x));
            }
            assert_eq!(cl.delta_in, cl.in_after - cl.in_before);
        }
        let normalized = explain(
            &forest,
            &store,
            &data.vectors[0],
            Some(1),
            &ExplainOptions {
                normalize: true,
                ..ExplainOptions::default()
            },
        )
        .unwrap();
        for (a, b) in normalized.features.iter().zip(&report.features) {
            assert!((a.contribution - b.contribution / store.len() as f64).abs() < 1e-15);
        }
    }

    #[test]
    fn single_leaf_forest_changes_nothing() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let vectors = random_vectors(12, 4, &mut rng);
        let labels = (0..12).map(|i| i % 2).collect();
        let data = BinaryDataset::from_bits(vectors, labels, 2).unwrap();
        let forest = train(
            &data,
            &TrainConfig {
                tree_count: 4,
                max_depth: Some(1),
                feature_subset: FeatureSubset::Count(4),
                ..TrainConfig::default()
            },
        )
        .unwrap();
        let mut stumpless = forest.clone();
        for t in &mut stumpless.trees {
            t.nodes = vec![crate::forest::TreeNode::Leaf {
                leaf_id: 0,
                class_counts: vec![1, 1],
                majority: 0,
            }];
            t.leaf_count = 1;
        }
        let store = build_store(&stumpless, &data).unwrap();
        // every training instance is predicted class 0; its out-group is empty
        let opts = ExplainOptions {
            membership: Membership::True,
            ..ExplainOptions::default()
        };
        let report = explain(&stumpless, &store, &data.vectors[0], None, &opts).unwrap();
        assert_eq!(report.features.iter().map(|f| f.changed_tree_count).sum::<usize>(), 0);
    }

    #[test]
    fn diff_values() {
        let (forest, data, store) = decisive_setup(11);
        let v = &data.vectors[0];
        let opts = ExplainOptions::default();
        let a = explain(&forest, &store, v, Some(0), &opts).unwrap();
        let b = explain(&forest, &store, v, Some(1), &opts).unwrap();
        assert!(misclassification_diff(&a, &a).unwrap().iter().all(|&x| x == 0.0));
        assert_eq!(
            misclassification_diff(&a, &b).unwrap(),
            misclassification_diff(&b, &a).unwrap()
        );

        let mut x = a.clone();
        let mut y = a.clone();
        x.features[0].contribution = 0.3;
        y.features[0].contribution = -0.1;
        assert!((misclassification_diff(&x, &y).unwrap()[0] - 0.16).abs() < 1e-15);

        let other = explain(&forest, &store, &data.vectors[1], Some(1), &opts).unwrap();
        if other.input != a.input {
            assert!(misclassification_diff(&a, &other).is_err());
        }
    }
}
