//! Pure numeric metrics: AUROC, FPR at fixed TPR, factuality ratio,
//! coverage accuracy, and Spearman rank correlation.
//!
//! All functions are pure and reentrant; scores may be `f64::INFINITY`
//! (the sentinel for "maximally suspicious") but never NaN.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    /// ROC operations need at least one positive and one negative item.
    #[error("degenerate labels: need at least one positive and one negative item")]
    DegenerateLabels,
    /// Factuality is undefined with zero propositions.
    #[error("no propositions were judged")]
    NoPropositions,
    /// Coverage is undefined with zero questions.
    #[error("no question outcomes supplied")]
    NoQuestions,
    /// Rank correlation is undefined when either coordinate has zero rank variance.
    #[error("undefined correlation: zero rank variance in one coordinate")]
    UndefinedCorrelation,
    #[error("need at least {need} pairs, got {got}")]
    NotEnoughPairs { need: usize, got: usize },
    #[error("scores must not be NaN")]
    NonFiniteScore,
    #[error("tpr floor must be in (0, 1], got {0}")]
    InvalidTprFloor(f64),
}

/// One scored, labeled item. `label == true` marks the positive class
/// (a hallucination in detection benchmarks).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoredItem {
    pub score: f64,
    pub label: bool,
}

/// A set of scored items with binary labels, the input to ROC analysis.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct BinaryScoredSet {
    pub items: Vec<ScoredItem>,
}

impl BinaryScoredSet {
    pub fn new(items: Vec<ScoredItem>) -> Self {
        Self { items }
    }

    /// Build from separate positive and negative score lists.
    pub fn from_parts(positives: &[f64], negatives: &[f64]) -> Self {
        let items = positives
            .iter()
            .map(|&score| ScoredItem { score, label: true })
            .chain(negatives.iter().map(|&score| ScoredItem {
                score,
                label: false,
            }))
            .collect();
        Self { items }
    }

    fn validate_roc(&self) -> Result<(usize, usize), MetricError> {
        if self.items.iter().any(|it| it.score.is_nan()) {
            return Err(MetricError::NonFiniteScore);
        }
        let pos = self.items.iter().filter(|it| it.label).count();
        let neg = self.items.len() - pos;
        if pos == 0 || neg == 0 {
            return Err(MetricError::DegenerateLabels);
        }
        Ok((pos, neg))
    }
}

/// Area under the ROC curve, computed as the Mann-Whitney statistic:
/// over all (positive, negative) pairs, the fraction where the positive
/// scores strictly higher, with ties credited 0.5. `+inf` beats every
/// finite score; two `+inf` scores tie.
pub fn auroc(set: &BinaryScoredSet) -> Result<f64, MetricError> {
    let (pos, neg) = set.validate_roc()?;
    let scores: Vec<f64> = set.items.iter().map(|it| it.score).collect();
    let ranks = average_ranks(&scores);
    let pos_rank_sum: f64 = set
        .items
        .iter()
        .zip(&ranks)
        .filter(|(it, _)| it.label)
        .map(|(_, &r)| r)
        .sum();
    let p = pos as f64;
    let n = neg as f64;
    Ok((pos_rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

/// False positive rate at the maximal threshold whose true positive rate
/// still reaches `tpr_floor` (no interpolation). An item is flagged when
/// its score is at least the threshold.
pub fn fpr_at_tpr(set: &BinaryScoredSet, tpr_floor: f64) -> Result<f64, MetricError> {
    if !(tpr_floor > 0.0 && tpr_floor <= 1.0) {
        return Err(MetricError::InvalidTprFloor(tpr_floor));
    }
    let (pos, neg) = set.validate_roc()?;
    // Smallest flagged-positive count m with m/P >= floor; the maximal
    // threshold achieving it is the m-th largest positive score.
    let needed = (1..=pos)
        .find(|&m| m as f64 / pos as f64 >= tpr_floor)
        .expect("tpr_floor <= 1 is always reachable at m = P");
    let mut pos_scores: Vec<f64> = set
        .items
        .iter()
        .filter(|it| it.label)
        .map(|it| it.score)
        .collect();
    pos_scores.sort_by(|a, b| b.total_cmp(a));
    let threshold = pos_scores[needed - 1];
    let false_pos = set
        .items
        .iter()
        .filter(|it| !it.label && it.score >= threshold)
        .count();
    Ok(false_pos as f64 / neg as f64)
}

/// Fraction of propositions judged true: T / (T + F).
pub fn factuality_ratio(true_count: usize, false_count: usize) -> Result<f64, MetricError> {
    let total = true_count + false_count;
    if total == 0 {
        return Err(MetricError::NoPropositions);
    }
    Ok(true_count as f64 / total as f64)
}

/// Outcome of one multiple-choice question answered from a caption.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnswerOutcome {
    Correct,
    Incorrect,
    /// No single option letter could be extracted; counts as incorrect.
    Unparseable,
}

/// Fraction of questions answered correctly. Unparseable answers count
/// as incorrect rather than being excluded.
pub fn coverage_accuracy(outcomes: &[AnswerOutcome]) -> Result<f64, MetricError> {
    if outcomes.is_empty() {
        return Err(MetricError::NoQuestions);
    }
    let correct = outcomes
        .iter()
        .filter(|o| matches!(o, AnswerOutcome::Correct))
        .count();
    Ok(correct as f64 / outcomes.len() as f64)
}

/// A paired series for rank correlation.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct RankSeries {
    pub pairs: Vec<(f64, f64)>,
}

impl RankSeries {
    pub fn new(pairs: Vec<(f64, f64)>) -> Self {
        Self { pairs }
    }
}

/// Spearman's rank correlation: Pearson correlation of average-ranked
/// values, with ties receiving the mean of the ranks they span.
pub fn spearman_rho(series: &RankSeries) -> Result<f64, MetricError> {
    let n = series.pairs.len();
    if n < 2 {
        return Err(MetricError::NotEnoughPairs { need: 2, got: n });
    }
    if series.pairs.iter().any(|(a, b)| a.is_nan() || b.is_nan()) {
        return Err(MetricError::NonFiniteScore);
    }
    let a: Vec<f64> = series.pairs.iter().map(|p| p.0).collect();
    let b: Vec<f64> = series.pairs.iter().map(|p| p.1).collect();
    pearson(&average_ranks(&a), &average_ranks(&b))
}

fn pearson(x: &[f64], y: &[f64]) -> Result<f64, MetricError> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (&xi, &yi) in x.iter().zip(y) {
        let dx = xi - mx;
        let dy = yi - my;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(MetricError::UndefinedCorrelation);
    }
    Ok(sxy / (sxx * syy).sqrt())
}

/// 1-based ranks with tied values receiving the average of their span.
/// Infinite values rank above all finite ones and tie among themselves.
pub(crate) fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&i, &j| values[i].total_cmp(&values[j]));
    let mut ranks = vec![0.0; values.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && values[order[end]] == values[order[start]] {
            end += 1;
        }
        // positions start..end (0-based) share the mean of ranks start+1..=end
        let mean_rank = (start + 1 + end) as f64 / 2.0;
        for &idx in &order[start..end] {
            ranks[idx] = mean_rank;
        }
        start = end;
    }
    ranks
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Independent O(P*N) oracle: count pairs directly.
    fn auroc_pair_count(set: &BinaryScoredSet) -> f64 {
        let pos: Vec<f64> = set
            .items
            .iter()
            .filter(|it| it.label)
            .map(|it| it.score)
            .collect();
        let neg: Vec<f64> = set
            .items
            .iter()
            .filter(|it| !it.label)
            .map(|it| it.score)
            .collect();
        let mut credit = 0.0;
        for &p in &pos {
            for &n in &neg {
                if p > n {
                    credit += 1.0;
                } else if p == n {
                    credit += 0.5;
                }
            }
        }
        credit / (pos.len() as f64 * neg.len() as f64)
    }

    #[test]
    fn auroc_perfect_separation() {
        let set = BinaryScoredSet::from_parts(&[0.9, 0.8], &[0.3, 0.1]);
        assert_eq!(auroc(&set).unwrap(), 1.0);
    }

    #[test]
    fn auroc_one_win_one_loss() {
        // pos {0.8, 0.6}, neg {0.7}: one winning pair, one losing pair
        let set = BinaryScoredSet::from_parts(&[0.8, 0.6], &[0.7]);
        assert_eq!(auroc(&set).unwrap(), 0.5);
    }

    #[test]
    fn auroc_infinite_sentinel_beats_finite_and_ties_infinite() {
        let set = BinaryScoredSet::from_parts(&[f64::INFINITY], &[1e300]);
        assert_eq!(auroc(&set).unwrap(), 1.0);
        let tied = BinaryScoredSet::from_parts(&[f64::INFINITY], &[f64::INFINITY]);
        assert_eq!(auroc(&tied).unwrap(), 0.5);
    }

    #[test]
    fn auroc_degenerate_labels() {
        let set = BinaryScoredSet::from_parts(&[1.0, 2.0], &[]);
        assert_eq!(auroc(&set), Err(MetricError::DegenerateLabels));
    }

    #[test]
    fn fpr_at_tpr_hand_enumerated() {
        let set = BinaryScoredSet::from_parts(&[0.9, 0.8], &[0.7, 0.1]);
        assert_eq!(fpr_at_tpr(&set, 0.95).unwrap(), 0.0);

        let set = BinaryScoredSet::from_parts(&[0.9, 0.5], &[0.7, 0.6]);
        assert_eq!(fpr_at_tpr(&set, 0.95).unwrap(), 1.0);
    }

    #[test]
    fn fpr_at_tpr_separable_is_zero() {
        let set = BinaryScoredSet::from_parts(&[3.0, 2.0, 1.5], &[1.0, 0.5]);
        assert_eq!(fpr_at_tpr(&set, 0.95).unwrap(), 0.0);
    }

    #[test]
    fn fpr_at_tpr_rejects_bad_floor() {
        let set = BinaryScoredSet::from_parts(&[1.0], &[0.0]);
        assert!(matches!(
            fpr_at_tpr(&set, 0.0),
            Err(MetricError::InvalidTprFloor(_))
        ));
        assert!(matches!(
            fpr_at_tpr(&set, 1.5),
            Err(MetricError::InvalidTprFloor(_))
        ));
    }

    #[test]
    fn factuality_ratio_examples() {
        assert_eq!(factuality_ratio(3, 1).unwrap(), 0.75);
        assert_eq!(factuality_ratio(0, 5).unwrap(), 0.0);
        assert_eq!(factuality_ratio(7, 0).unwrap(), 1.0);
        assert_eq!(factuality_ratio(0, 0), Err(MetricError::NoPropositions));
    }

    #[test]
    fn factuality_ratio_complement() {
        assert_eq!(
            factuality_ratio(4, 9).unwrap() + factuality_ratio(9, 4).unwrap(),
            1.0
        );
    }

    #[test]
    fn coverage_accuracy_counts_unparseable_as_incorrect() {
        use AnswerOutcome::*;
        assert_eq!(
            coverage_accuracy(&[Correct, Correct, Incorrect, Correct]).unwrap(),
            0.75
        );
        assert_eq!(coverage_accuracy(&[Unparseable, Unparseable]).unwrap(), 0.0);
        assert_eq!(coverage_accuracy(&[]), Err(MetricError::NoQuestions));
    }

    #[test]
    fn spearman_hand_examples() {
        let id = RankSeries::new(vec![(1.0, 1.0), (2.0, 2.0), (3.0, 3.0)]);
        assert_eq!(spearman_rho(&id).unwrap(), 1.0);
        let rev = RankSeries::new(vec![(1.0, 3.0), (2.0, 2.0), (3.0, 1.0)]);
        assert_eq!(spearman_rho(&rev).unwrap(), -1.0);
        // 1 - 6 * 2 / (4 * 15) = 0.8
        let swapped = RankSeries::new(vec![(1.0, 1.0), (2.0, 3.0), (3.0, 2.0), (4.0, 4.0)]);
        assert!((spearman_rho(&swapped).unwrap() - 0.8).abs() < 1e-12);
    }

    #[test]
    fn spearman_zero_variance_is_undefined() {
        let flat = RankSeries::new(vec![(1.0, 5.0), (1.0, 7.0)]);
        assert_eq!(spearman_rho(&flat), Err(MetricError::UndefinedCorrelation));
    }

    #[test]
    fn average_ranks_handles_ties() {
        assert_eq!(
            average_ranks(&[3.0, 1.0, 3.0, 2.0]),
            vec![3.5, 1.0, 3.5, 2.0]
        );
    }

    fn arb_set() -> impl Strategy<Value = BinaryScoredSet> {
        // Small score alphabet forces ties; occasional infinities.
        let item = (
            prop_oneof![
                1 => Just(f64::INFINITY),
                9 => (0..40u8).prop_map(|v| v as f64 / 8.0)
            ],
            any::<bool>(),
        )
            .prop_map(|(score, label)| ScoredItem { score, label });
        proptest::collection::vec(item, 2..60).prop_map(BinaryScoredSet::new)
    }

    proptest! {
        #[test]
        fn auroc_matches_pair_count_oracle(set in arb_set()) {
            let pos = set.items.iter().filter(|it| it.label).count();
            prop_assume!(pos > 0 && pos < set.items.len());
            let fast = auroc(&set).unwrap();
            let slow = auroc_pair_count(&set);
            prop_assert!((fast - slow).abs() < 1e-12);
        }

        #[test]
        fn auroc_invariant_under_monotone_transform(set in arb_set()) {
            let pos = set.items.iter().filter(|it| it.label).count();
            prop_assume!(pos > 0 && pos < set.items.len());
            let transformed = BinaryScoredSet::new(
                set.items
                    .iter()
                    .map(|it| ScoredItem { score: it.score.exp(), label: it.label })
                    .collect(),
            );
            prop_assert!((auroc(&set).unwrap() - auroc(&transformed).unwrap()).abs() < 1e-12);
        }

        #[test]
        fn auroc_label_flip_without_ties(scores in proptest::collection::hash_set(0..1000u32, 4..50)) {
            // Distinct scores, alternating labels.
            let items: Vec<ScoredItem> = scores
                .into_iter()
                .enumerate()
                .map(|(i, s)| ScoredItem { score: s as f64, label: i % 2 == 0 })
                .collect();
            let set = BinaryScoredSet::new(items.clone());
            let flipped = BinaryScoredSet::new(
                items.iter().map(|it| ScoredItem { score: it.score, label: !it.label }).collect(),
            );
            prop_assert!((auroc(&set).unwrap() - (1.0 - auroc(&flipped).unwrap())).abs() < 1e-12);
        }

        #[test]
        fn fpr_non_increasing_as_floor_decreases(set in arb_set(), hi in 0.5f64..1.0, lo in 0.01f64..0.5) {
            let pos = set.items.iter().filter(|it| it.label).count();
            prop_assume!(pos > 0 && pos < set.items.len());
            let at_hi = fpr_at_tpr(&set, hi).unwrap();
            let at_lo = fpr_at_tpr(&set, lo).unwrap();
            prop_assert!(at_lo <= at_hi + 1e-12);
        }

        #[test]
        fn spearman_invariant_under_monotone_transform(
            pairs in proptest::collection::vec((-50i32..50, -50i32..50), 3..30)
        ) {
            let series = RankSeries::new(
                pairs.iter().map(|&(a, b)| (a as f64, b as f64)).collect(),
            );
            let transformed = RankSeries::new(
                pairs.iter().map(|&(a, b)| ((a as f64).exp(), b as f64 * 3.0 + 7.0)).collect(),
            );
            match (spearman_rho(&series), spearman_rho(&transformed)) {
                (Ok(x), Ok(y)) => prop_assert!((x - y).abs() < 1e-12),
                (Err(_), Err(_)) => {}
                (a, b) => prop_assert!(false, "mismatched outcomes {a:?} vs {b:?}"),
            }
        }
    }
}
