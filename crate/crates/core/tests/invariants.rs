use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use proxplain::contribution::{explain, fast_leaf_signature, ExplainOptions, PathContext};
use proxplain::dataset::{
    fit_binarizer, holdout_indices, BinarizationSpec, BinarizerConfig, BinaryDataset, BinaryVector, Cut, FeatureKind,
    RawDataset, SourceFeature,
};
use proxplain::forest::{train, Forest, TrainConfig, TreeNode};
use proxplain::proximity::build_store;

fn random_dataset(seed: u64, n: usize, f: usize, classes: usize) -> BinaryDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let vectors: Vec<BinaryVector> = (0..n)
        .map(|_| BinaryVector::from_bools(&(0..f).map(|_| rng.gen_bool(0.5)).collect::<Vec<_>>()))
        .collect();
    let mut labels: Vec<usize> = (0..n).map(|_| rng.gen_range(0..classes)).collect();
    labels[0] = 0;
    labels[1] = 1;
    BinaryDataset::from_bits(vectors, labels, classes).unwrap()
}

fn random_forest(seed: u64, n: usize, f: usize, trees: usize) -> (Forest, BinaryDataset) {
    let data = random_dataset(seed, n, f, 3);
    let forest = train(
        &data,
        &TrainConfig {
            tree_count: trees,
            seed,
            ..TrainConfig::default()
        },
    )
    .unwrap();
    (forest, data)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn no_path_repeats_a_feature(seed in any::<u64>()) {
        let (forest, _) = random_forest(seed, 40, 8, 5);
        for tree in &forest.trees {
            // walk every root-to-leaf path
            let mut stack = vec![(0usize, Vec::<usize>::new())];
            while let Some((at, path)) = stack.pop() {
                if let TreeNode::Split { feature, left, right } = &tree.nodes[at] {
                    prop_assert!(!path.contains(feature));
                    let mut next = path.clone();
                    next.push(*feature);
                    stack.push((*left, next.clone()));
                    stack.push((*right, next));
                }
            }
        }
    }

    #[test]
    fn fast_signature_equals_full_traversal(seed in any::<u64>(), probe in any::<u64>()) {
        let (forest, _) = random_forest(seed, 30, 10, 6);
        let mut rng = ChaCha8Rng::seed_from_u64(probe);
        let v = BinaryVector::from_bools(&(0..10).map(|_| rng.gen_bool(0.5)).collect::<Vec<_>>());
        let ctx = PathContext::new(&forest, &v).unwrap();
        for k in 0..10 {
            let fast = fast_leaf_signature(&forest, &ctx, &v, k).unwrap();
            prop_assert_eq!(fast, forest.leaf_signature(&v.flipped(k).unwrap()).unwrap());
        }
    }

    #[test]
    fn training_is_order_independent(seed in any::<u64>()) {
        let data = random_dataset(seed, 25, 6, 2);
        let cfg = TrainConfig { tree_count: 8, seed, ..TrainConfig::default() };
        let parallel = train(&data, &cfg).unwrap();
        let single = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let serial = single.install(|| train(&data, &cfg).unwrap());
        prop_assert_eq!(parallel.to_json_bytes(), serial.to_json_bytes());
    }

    #[test]
    fn zero_impact_is_exact(seed in any::<u64>()) {
        let data = random_dataset(seed, 20, 30, 2);
        let forest = train(&data, &TrainConfig {
            tree_count: 4,
            max_depth: Some(2),
            seed,
            ..TrainConfig::default()
        }).unwrap();
        let store = build_store(&forest, &data).unwrap();
        let used: Vec<usize> = forest.trees.iter().flat_map(|t| t.split_features()).collect();
        let report = explain(&forest, &store, &data.vectors[0], None, &ExplainOptions {
            membership: proxplain::proximity::Membership::True,
            ..ExplainOptions::default()
        }).unwrap();
        for fc in &report.features {
            if !used.contains(&fc.feature_index) {
                prop_assert_eq!(fc.contribution, 0.0);
                prop_assert_eq!(fc.closeness.delta_in, 0.0);
                prop_assert_eq!(fc.closeness.delta_out, 0.0);
            }
            if fc.changed_tree_count == 0 {
                prop_assert_eq!(fc.contribution, 0.0);
            }
        }
    }

    #[test]
    fn threshold_bits_flip_only_when_crossed(
        cuts in prop::collection::btree_set(-100i32..100, 1..6),
        x in -120i32..120,
        y in -120i32..120,
    ) {
        let values: Vec<f64> = cuts.iter().map(|&c| f64::from(c) + 0.5).collect();
        let spec = BinarizationSpec::from_features(vec![SourceFeature {
            name: "x".into(),
            kind: FeatureKind::Thresholds { cuts: values.iter().map(|&v| Cut::less_than(v)).collect() },
        }]).unwrap();
        let (x, y) = (f64::from(x), f64::from(y));
        let a = spec.apply(&[x]).unwrap();
        let b = spec.apply(&[y]).unwrap();
        prop_assert_eq!(spec.apply(&[x]).unwrap(), a.clone());
        for (i, &t) in values.iter().enumerate() {
            let crossed = (x < t) != (y < t);
            prop_assert_eq!(a.get(i) != b.get(i), crossed);
        }
    }

    #[test]
    fn one_hot_rows_sum_to_one(codes in prop::collection::vec(0u8..5, 2..40)) {
        let rows: Vec<Vec<f64>> = codes.iter().map(|&c| vec![f64::from(c) * 10.0]).collect();
        let labels: Vec<usize> = codes.iter().map(|&c| usize::from(c % 2)).collect();
        let raw = RawDataset::new(rows, labels, vec!["c".into()], vec!["a".into(), "b".into()]).unwrap();
        let spec = fit_binarizer(&raw, &BinarizerConfig::default()).unwrap();
        if let FeatureKind::OneHot { .. } = spec.features[0].kind {
            for row in &raw.rows {
                let v = spec.apply(row).unwrap();
                prop_assert_eq!(v.bits().iter().map(|&b| usize::from(b)).sum::<usize>(), 1);
            }
        }
    }

    #[test]
    fn holdout_partitions(n in 2usize..200, fraction in 0.01f64..0.99, seed in any::<u64>()) {
        if let Ok((train, test)) = holdout_indices(n, fraction, seed) {
            prop_assert!(!train.is_empty() && !test.is_empty());
            let mut all: Vec<usize> = train.iter().chain(&test).copied().collect();
            all.sort_unstable();
            prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
        }
    }
}
