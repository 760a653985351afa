//! Cross-model comparison of feature contributions: paired-sample
//! collection, correlation statistics, and a 2×2 sign contingency test.

use serde::{Deserialize, Serialize};

use crate::contribution::ContributionReport;
use crate::error::{Error, Result};

pub const DEFAULT_THRESHOLD: f64 = 0.0001;

/// Which contributions must exceed the threshold for a pair to be kept.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterMode {
    #[default]
    Both,
    Either,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairOrigin {
    pub instance: usize,
    pub feature: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PairedSample {
    pub pairs: Vec<(f64, f64)>,
    pub provenance: Vec<PairOrigin>,
}

impl PairedSample {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    fn columns(&self) -> (Vec<f64>, Vec<f64>) {
        self.pairs.iter().copied().unzip()
    }
}

/// Collects (model A, model B) contribution pairs over instances that at
/// least one model predicted as its high class.
pub fn collect_pairs(
    reports_a: &[ContributionReport],
    reports_b: &[ContributionReport],
    high_class_a: usize,
    high_class_b: usize,
    threshold: f64,
    mode: FilterMode,
) -> Result<PairedSample> {
    if reports_a.len() != reports_b.len() {
        return Err(Error::DimensionMismatch {
            what: "report count",
            expected: reports_a.len(),
            actual: reports_b.len(),
        });
    }
    let mut sample = PairedSample::default();
    for (instance, (a, b)) in reports_a.iter().zip(reports_b).enumerate() {
        if a.instance_id != b.instance_id || a.input != b.input {
            return Err(Error::InvalidInput(format!(
                "report {instance} describes different instances in the two models"
            )));
        }
        if a.features.len() != b.features.len() {
            return Err(Error::DimensionMismatch {
                what: "report feature count",
                expected: a.features.len(),
                actual: b.features.len(),
            });
        }
        if a.predicted_class != high_class_a && b.predicted_class != high_class_b {
            continue;
        }
        for (fa, fb) in a.features.iter().zip(&b.features) {
            let (x, y) = (fa.contribution, fb.contribution);
            let keep = match mode {
                FilterMode::Both => x.abs() > threshold && y.abs() > threshold,
                FilterMode::Either => x.abs() > threshold || y.abs() > threshold,
            };
            if keep {
                sample.pairs.push((x, y));
                sample.provenance.push(PairOrigin {
                    instance,
                    feature: fa.feature_index,
                });
            }
        }
    }
    Ok(sample)
}

fn check_len(n: usize) -> Result<()> {
    if n < 2 {
        return Err(Error::UndefinedCorrelation("fewer than two pairs"));
    }
    Ok(())
}

fn pearson_columns(x: &[f64], y: &[f64]) -> Result<f64> {
    check_len(x.len())?;
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (&a, &b) in x.iter().zip(y) {
        let (da, db) = (a - mx, b - my);
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::UndefinedCorrelation("constant sequence"));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

pub fn pearson_r(sample: &PairedSample) -> Result<f64> {
    let (x, y) = sample.columns();
    pearson_columns(&x, &y)
}

/// 1-based ranks; tied values share their mean rank.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && values[order[end]] == values[order[start]] {
            end += 1;
        }
        // positions start..end hold ranks start+1..=end
        let rank = (start + end + 1) as f64 / 2.0;
        for &i in &order[start..end] {
            ranks[i] = rank;
        }
        start = end;
    }
    ranks
}

/// Pearson correlation of average ranks.
pub fn spearman_rho(sample: &PairedSample) -> Result<f64> {
    let (x, y) = sample.columns();
    check_len(x.len())?;
    pearson_columns(&average_ranks(&x), &average_ranks(&y))
}

/// Pairs tied within runs of equal keys in an ordered sequence.
fn tied_pairs<T: PartialEq>(items: impl Iterator<Item = T>) -> u64 {
    let mut total = 0u64;
    let mut run = 0u64;
    let mut prev: Option<T> = None;
    for item in items {
        if prev.as_ref() == Some(&item) {
            run += 1;
        } else {
            total += run * run.saturating_sub(1) / 2;
            run = 1;
        }
        prev = Some(item);
    }
    total + run * run.saturating_sub(1) / 2
}

/// Merge sort counting inversions (strictly decreasing pairs).
fn count_inversions(values: &mut [f64], scratch: &mut Vec<f64>) -> u64 {
    let n = values.len();
    if n < 2 {
        return 0;
    }
    let mid = n / 2;
    let mut swaps = count_inversions(&mut values[..mid], scratch) + count_inversions(&mut values[mid..], scratch);
    scratch.clear();
    let (mut i, mut j) = (0, mid);
    while i < mid && j < n {
        if values[j] < values[i] {
            swaps += (mid - i) as u64;
            scratch.push(values[j]);
            j += 1;
        } else {
            scratch.push(values[i]);
            i += 1;
        }
    }
    scratch.extend_from_slice(&values[i..mid]);
    scratch.extend_from_slice(&values[j..n]);
    values.copy_from_slice(scratch);
    swaps
}

/// Kendall's tau-b, O(n log n) (Knight's algorithm).
pub fn kendall_tau(sample: &PairedSample) -> Result<f64> {
    let n = sample.len();
    check_len(n)?;
    let mut pairs = sample.pairs.clone();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));

    let n0 = (n as u64) * (n as u64 - 1) / 2;
    let ties_x = tied_pairs(pairs.iter().map(|p| p.0));
    let ties_xy = tied_pairs(pairs.iter().map(|p| (p.0, p.1)));

    let mut ys: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    let mut scratch = Vec::with_capacity(n);
    let discordant = count_inversions(&mut ys, &mut scratch);
    // ys is now sorted
    let ties_y = tied_pairs(ys.iter().copied());

    if ties_x == n0 || ties_y == n0 {
        return Err(Error::UndefinedCorrelation("constant sequence"));
    }
    // concordant − discordant over pairs untied in both coordinates
    let untied_both = n0 + ties_xy - ties_x - ties_y;
    let concordant_minus_discordant = untied_both as f64 - 2.0 * discordant as f64;
    let denom = ((n0 - ties_x) as f64).sqrt() * ((n0 - ties_y) as f64).sqrt();
    Ok((concordant_minus_discordant / denom).clamp(-1.0, 1.0))
}

/// Rows: model A sign (negative, positive); columns: model B sign.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContingencyTable {
    pub counts: [[u64; 2]; 2],
}

impl ContingencyTable {
    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn transposed(&self) -> Self {
        let c = self.counts;
        ContingencyTable {
            counts: [[c[0][0], c[1][0]], [c[0][1], c[1][1]]],
        }
    }
}

/// Counts pairs by (sign a, sign b). Values ≤ 0 count as negative; with the
/// default both-sides filter no pair has a zero component.
pub fn sign_table(sample: &PairedSample) -> ContingencyTable {
    let mut counts = [[0u64; 2]; 2];
    for &(a, b) in &sample.pairs {
        counts[usize::from(a > 0.0)][usize::from(b > 0.0)] += 1;
    }
    ContingencyTable { counts }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChiSquare {
    pub statistic: f64,
    pub df: u32,
    pub expected: [[f64; 2]; 2],
    /// Pearson residuals (O − E) / √E.
    pub residuals: [[f64; 2]; 2],
}

/// Pearson χ² test of independence without continuity correction.
pub fn chi_square_2x2(table: &ContingencyTable) -> Result<ChiSquare> {
    let c = table.counts;
    let rows = [c[0][0] + c[0][1], c[1][0] + c[1][1]];
    let cols = [c[0][0] + c[1][0], c[0][1] + c[1][1]];
    if rows.contains(&0) || cols.contains(&0) {
        return Err(Error::InvalidInput("contingency table has a zero margin".into()));
    }
    let total = table.total() as f64;
    let mut expected = [[0.0; 2]; 2];
    let mut residuals = [[0.0; 2]; 2];
    let mut statistic = 0.0;
    for r in 0..2 {
        for k in 0..2 {
            let e = rows[r] as f64 * cols[k] as f64 / total;
            let diff = c[r][k] as f64 - e;
            expected[r][k] = e;
            residuals[r][k] = diff / e.sqrt();
            statistic += diff * diff / e;
        }
    }
    Ok(ChiSquare {
        statistic,
        df: 1,
        expected,
        residuals,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::contribution::{Closeness, FeatureContribution};
    use crate::dataset::BinaryVector;
    use proptest::prelude::*;

    fn sample(pairs: &[(f64, f64)]) -> PairedSample {
        PairedSample {
            pairs: pairs.to_vec(),
            provenance: vec![
                PairOrigin {
                    instance: 0,
                    feature: 0
                };
                pairs.len()
            ],
        }
    }

    /// O(n²) tau-b straight from the definition.
    fn kendall_naive(pairs: &[(f64, f64)]) -> f64 {
        let (mut conc, mut disc, mut tx, mut ty) = (0i64, 0i64, 0i64, 0i64);
        for i in 0..pairs.len() {
            for j in i + 1..pairs.len() {
                let dx = pairs[i].0 - pairs[j].0;
                let dy = pairs[i].1 - pairs[j].1;
                if dx == 0.0 && dy == 0.0 {
                    tx += 1;
                    ty += 1;
                } else if dx == 0.0 {
                    tx += 1;
                } else if dy == 0.0 {
                    ty += 1;
                } else if (dx > 0.0) == (dy > 0.0) {
                    conc += 1;
                } else {
                    disc += 1;
                }
            }
        }
        let n0 = (pairs.len() * (pairs.len() - 1) / 2) as f64;
        (conc - disc) as f64 / ((n0 - tx as f64).sqrt() * (n0 - ty as f64).sqrt())
    }

    #[test]
    fn perfect_lines() {
        let up = sample(&[(1.0, 2.0), (2.0, 4.0), (3.0, 6.0), (4.0, 8.0)]);
        let down = sample(&[(1.0, 8.0), (2.0, 6.0), (3.0, 4.0), (4.0, 2.0)]);
        for f in [pearson_r, spearman_rho, kendall_tau] {
            assert!((f(&up).unwrap() - 1.0).abs() < 1e-12);
            assert!((f(&down).unwrap() + 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn spearman_hand_ranked() {
        // ranks x = 1,2,3,4; y = 2,1,4,3; d² sums to 4, rho = 1 − 6·4/(4·15) = 0.6
        let s = sample(&[(1.0, 2.0), (2.0, 1.0), (3.0, 4.0), (4.0, 3.0)]);
        assert!((spearman_rho(&s).unwrap() - 0.6).abs() < 1e-12);
        // four concordant, two discordant pairs
        assert!((kendall_tau(&s).unwrap() - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn average_ranks_with_ties() {
        assert_eq!(average_ranks(&[10.0, 20.0, 10.0, 30.0]), vec![1.5, 3.0, 1.5, 4.0]);
    }

    #[test]
    fn undefined_cases() {
        assert!(pearson_r(&sample(&[(1.0, 2.0)])).is_err());
        let flat = sample(&[(1.0, 2.0), (1.0, 3.0), (1.0, 4.0)]);
        assert!(pearson_r(&flat).is_err());
        assert!(spearman_rho(&flat).is_err());
        assert!(kendall_tau(&flat).is_err());
    }

    #[test]
    fn kendall_matches_naive_with_ties() {
        let pairs = [
            (1.0, 1.0),
            (1.0, 2.0),
            (2.0, 2.0),
            (2.0, 2.0),
            (3.0, 1.0),
            (4.0, 5.0),
            (4.0, 3.0),
            (5.0, 5.0),
        ];
        let fast = kendall_tau(&sample(&pairs)).unwrap();
        assert!((fast - kendall_naive(&pairs)).abs() < 1e-12);
    }

    #[test]
    fn table_one_counts() {
        let t = ContingencyTable {
            counts: [[13875, 61634], [25338, 25513]],
        };
        let chi = chi_square_2x2(&t).unwrap();
        assert!((chi.statistic - 14045.57).abs() < 5.0);
        assert_eq!(chi.df, 1);
        let expected = [[-62.43, 41.88], [76.08, -51.04]];
        for (got, want) in chi.residuals.iter().flatten().zip(expected.iter().flatten()) {
            assert!((got - want).abs() < 0.1);
        }
    }

    #[test]
    fn chi_square_small_cases() {
        let diag = ContingencyTable {
            counts: [[10, 0], [0, 10]],
        };
        assert!((chi_square_2x2(&diag).unwrap().statistic - 20.0).abs() < 1e-12);
        let prop = ContingencyTable {
            counts: [[10, 20], [30, 60]],
        };
        assert!(chi_square_2x2(&prop).unwrap().statistic.abs() < 1e-12);
        let zero = ContingencyTable {
            counts: [[0, 0], [3, 4]],
        };
        assert!(chi_square_2x2(&zero).is_err());
    }

    #[test]
    fn sign_tables() {
        let s = sample(&[(0.1, 0.2), (0.3, 0.4)]);
        assert_eq!(sign_table(&s).counts, [[0, 0], [0, 2]]);
        let mirrored = sample(&[(0.1, -0.1), (-0.5, 0.5), (2.0, -2.0)]);
        assert_eq!(sign_table(&mirrored).counts, [[0, 1], [2, 0]]);

        // synthetic sample shaped like a known table reproduces its counts
        let target = [[13u64, 61], [25, 25]];
        let mut pairs = Vec::new();
        for (r, row) in target.iter().enumerate() {
            for (c, &n) in row.iter().enumerate() {
                let a = if r == 1 { 0.5 } else { -0.5 };
                let b = if c == 1 { 0.25 } else { -0.25 };
                pairs.extend(std::iter::repeat_n((a, b), n as usize));
            }
        }
        assert_eq!(sign_table(&sample(&pairs)).counts, target);
    }

    fn report(instance: &str, predicted: usize, contributions: &[f64]) -> ContributionReport {
        let zero = Closeness {
            in_before: 0.0,
            out_before: 0.0,
            in_after: 0.0,
            out_after: 0.0,
            delta_in: 0.0,
            delta_out: 0.0,
        };
        ContributionReport {
            model_id: String::new(),
            instance_id: instance.into(),
            input: BinaryVector::zeros(contributions.len()),
            predicted_class: predicted,
            target_class: 1,
            votes: vec![0, 0],
            normalized: false,
            features: contributions
                .iter()
                .enumerate()
                .map(|(i, &c)| FeatureContribution {
                    feature_index: i,
                    name: format!("f{i}"),
                    contribution: c,
                    closeness: zero,
                    changed_tree_count: 0,
                })
                .collect(),
        }
    }

    #[test]
    fn collect_filters() {
        let zeros_a = vec![report("0", 1, &[0.0, 0.0])];
        let zeros_b = vec![report("0", 1, &[0.0, 0.0])];
        assert!(
            collect_pairs(&zeros_a, &zeros_b, 1, 1, DEFAULT_THRESHOLD, FilterMode::Both)
                .unwrap()
                .is_empty()
        );

        let a = vec![report("0", 1, &[0.00005, 0.2])];
        let b = vec![report("0", 0, &[0.5, -0.3])];
        let s = collect_pairs(&a, &b, 1, 1, DEFAULT_THRESHOLD, FilterMode::Both).unwrap();
        assert_eq!(s.pairs, vec![(0.2, -0.3)]);
        let s = collect_pairs(&a, &b, 1, 1, DEFAULT_THRESHOLD, FilterMode::Either).unwrap();
        assert_eq!(s.len(), 2);
    }

    #[test]
    fn collect_known_survivors() {
        // instance 2 is high in neither model and is skipped entirely
        let a = vec![
            report("0", 1, &[0.1, -0.2, 0.0]),
            report("1", 0, &[0.3, 0.4, 0.5]),
            report("2", 0, &[0.9, 0.9, 0.9]),
            report("3", 1, &[-0.7, 0.00001, 0.6]),
        ];
        let b = vec![
            report("0", 0, &[-0.1, 0.2, 0.3]),
            report("1", 1, &[0.0, -0.4, 0.5]),
            report("2", 0, &[0.9, 0.9, 0.9]),
            report("3", 0, &[0.7, 0.8, -0.6]),
        ];
        let s = collect_pairs(&a, &b, 1, 1, DEFAULT_THRESHOLD, FilterMode::Both).unwrap();
        assert_eq!(
            s.pairs,
            vec![
                (0.1, -0.1),
                (-0.2, 0.2),
                (0.4, -0.4),
                (0.5, 0.5),
                (-0.7, 0.7),
                (0.6, -0.6)
            ]
        );
        let origins: Vec<(usize, usize)> = s.provenance.iter().map(|p| (p.instance, p.feature)).collect();
        assert_eq!(origins, vec![(0, 0), (0, 1), (1, 1), (1, 2), (3, 0), (3, 2)]);
    }

    #[test]
    fn collect_rejects_mismatched_instances() {
        let a = vec![report("0", 1, &[0.1])];
        let b = vec![report("1", 1, &[0.1])];
        assert!(collect_pairs(&a, &b, 1, 1, DEFAULT_THRESHOLD, FilterMode::Both).is_err());
        assert!(collect_pairs(&a, &[], 1, 1, DEFAULT_THRESHOLD, FilterMode::Both).is_err());
    }

    fn pair_strategy() -> impl Strategy<Value = Vec<(f64, f64)>> {
        prop::collection::vec((-50i32..50, -50i32..50), 3..60).prop_map(|v| {
            v.into_iter()
                .map(|(a, b)| (f64::from(a) / 4.0, f64::from(b) / 4.0))
                .collect()
        })
    }

    proptest! {
        #[test]
        fn kendall_fast_equals_naive(pairs in pair_strategy()) {
            let s = sample(&pairs);
            match kendall_tau(&s) {
                Ok(fast) => prop_assert!((fast - kendall_naive(&pairs)).abs() < 1e-12),
                Err(_) => {
                    let xs_const = pairs.iter().all(|p| p.0 == pairs[0].0);
                    let ys_const = pairs.iter().all(|p| p.1 == pairs[0].1);
                    prop_assert!(xs_const || ys_const);
                }
            }
        }

        #[test]
        fn correlations_invariant_under_monotone_maps(pairs in pair_strategy(), scale in 0.1f64..10.0, shift in -5.0f64..5.0) {
            let s = sample(&pairs);
            let affine = sample(&pairs.iter().map(|&(a, b)| (a * scale + shift, b)).collect::<Vec<_>>());
            let cubed = sample(&pairs.iter().map(|&(a, b)| (a.powi(3), b.exp())).collect::<Vec<_>>());
            if let Ok(r) = pearson_r(&s) {
                prop_assert!((r - pearson_r(&affine).unwrap()).abs() < 1e-9);
            }
            if let Ok(rho) = spearman_rho(&s) {
                prop_assert!((rho - spearman_rho(&cubed).unwrap()).abs() < 1e-12);
            }
            if let Ok(tau) = kendall_tau(&s) {
                prop_assert!((tau - kendall_tau(&cubed).unwrap()).abs() < 1e-12);
            }
        }

        #[test]
        fn chi_square_symmetries(a in 1u64..500, b in 1u64..500, c in 1u64..500, d in 1u64..500) {
            let t = ContingencyTable { counts: [[a, b], [c, d]] };
            let chi = chi_square_2x2(&t).unwrap();
            let tt = chi_square_2x2(&t.transposed()).unwrap();
            let swapped = chi_square_2x2(&ContingencyTable { counts: [[d, c], [b, a]] }).unwrap();
            prop_assert!((chi.statistic - tt.statistic).abs() <= 1e-9 * chi.statistic.max(1.0));
            prop_assert!((chi.statistic - swapped.statistic).abs() <= 1e-9 * chi.statistic.max(1.0));
            for r in 0..2 {
                for k in 0..2 {
                    let diff = t.counts[r][k] as f64 - chi.expected[r][k];
                    if diff.abs() > 1e-9 {
                        prop_assert_eq!(chi.residuals[r][k] > 0.0, diff > 0.0);
                    }
                }
            }
        }
    }
}
