//! Binary-classification metrics: AUC, log loss, normalized entropy, and
//! relative information gain.
//!
//! All logarithms are natural, matching the loss and reward definitions used
//! in training.

use thiserror::Error;

use crate::numeric::clamp_prob;

#[derive(Debug, Error)]
pub enum MetricError {
    #[error("scores and labels have different lengths ({scores} vs {labels})")]
    LengthMismatch { scores: usize, labels: usize },
    #[error("metric needs both classes present")]
    SingleClass,
    #[error("metric undefined on an empty set")]
    Empty,
}

/// Predicted probabilities with their 0/1 labels.
#[derive(Debug, Clone, Default)]
pub struct ScoredSet {
    pub scores: Vec<f64>,
    pub labels: Vec<u8>,
}

impl ScoredSet {
    pub fn new(scores: Vec<f64>, labels: Vec<u8>) -> Result<Self, MetricError> {
        if scores.len() != labels.len() {
            return Err(MetricError::LengthMismatch {
                scores: scores.len(),
                labels: labels.len(),
            });
        }
        Ok(Self { scores, labels })
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    fn positives(&self) -> usize {
        self.labels.iter().filter(|&&y| y == 1).count()
    }

    /// Empirical CTR (fraction of positive labels).
    pub fn ctr(&self) -> f64 {
        if self.is_empty() {
            return 0.0;
        }
        self.positives() as f64 / self.len() as f64
    }
}

/// Area under the ROC curve via the rank-sum statistic: the probability that
/// a positive outranks a negative, with half credit for ties. Invariant under
/// strictly increasing score transforms. Requires both classes.
pub fn auc(set: &ScoredSet) -> Result<f64, MetricError> {
    if set.is_empty() {
        return Err(MetricError::Empty);
    }
    let n_pos = set.positives();
    let n_neg = set.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(MetricError::SingleClass);
    }
    let mut order: Vec<usize> = (0..set.len()).collect();
    order.sort_unstable_by(|&a, &b| set.scores[a].total_cmp(&set.scores[b]));

    // Average ranks over tie groups, then sum the positives' ranks.
    let mut rank_sum_pos = 0.0f64;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j < order.len() && set.scores[order[j]] == set.scores[order[i]] {
            j += 1;
        }
        // 1-based ranks i+1 ..= j averaged
        let avg_rank = (i + 1 + j) as f64 / 2.0;
        for &idx in &order[i..j] {
            if set.labels[idx] == 1 {
                rank_sum_pos += avg_rank;
            }
        }
        i = j;
    }
    let n_pos_f = n_pos as f64;
    Ok((rank_sum_pos - n_pos_f * (n_pos_f + 1.0) / 2.0) / (n_pos_f * n_neg as f64))
}

/// Mean negative log-likelihood with scores clamped to (1e-6, 1-1e-6).
pub fn log_loss(set: &ScoredSet) -> Result<f64, MetricError> {
    if set.is_empty() {
        return Err(MetricError::Empty);
    }
    let total: f64 = set
        .scores
        .iter()
        .zip(&set.labels)
        .map(|(&p, &y)| {
            let p = clamp_prob(p);
            if y == 1 {
                -p.ln()
            } else {
                -(1.0 - p).ln()
            }
        })
        .sum();
    Ok(total / set.len() as f64)
}

/// Normalized entropy: the model's log loss divided by the log loss of the
/// constant predictor at the set's empirical CTR. A constant predictor at
/// that CTR scores exactly 1. Requires both classes (CTR strictly inside
/// (0, 1)).
pub fn ne(set: &ScoredSet) -> Result<f64, MetricError> {
    let p = set.ctr();
    if set.is_empty() {
        return Err(MetricError::Empty);
    }
    if p <= 0.0 || p >= 1.0 {
        return Err(MetricError::SingleClass);
    }
    // Denominator through the same code path so the constant-p case divides
    // bitwise-identical numbers.
    let constant = ScoredSet {
        scores: vec![p; set.len()],
        labels: set.labels.clone(),
    };
    Ok(log_loss(set)? / log_loss(&constant)?)
}

/// Relative information gain, 1 - NE.
pub fn rig(set: &ScoredSet) -> Result<f64, MetricError> {
    Ok(1.0 - ne(set)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn set(scores: &[f64], labels: &[u8]) -> ScoredSet {
        ScoredSet::new(scores.to_vec(), labels.to_vec()).unwrap()
    }

    #[test]
    fn auc_perfect_ranking() {
        assert_eq!(auc(&set(&[0.9, 0.1], &[1, 0])).unwrap(), 1.0);
    }

    #[test]
    fn auc_all_ties_is_half() {
        assert_eq!(auc(&set(&[0.4, 0.4, 0.4, 0.4], &[1, 0, 1, 0])).unwrap(), 0.5);
    }

    #[test]
    fn auc_single_class_rejected() {
        assert!(matches!(
            auc(&set(&[0.2, 0.4], &[1, 1])),
            Err(MetricError::SingleClass)
        ));
    }

    #[test]
    fn auc_reversed_ranking_is_zero() {
        assert_eq!(auc(&set(&[0.1, 0.9], &[1, 0])).unwrap(), 0.0);
    }

    #[test]
    fn log_loss_constant_half_is_ln_two() {
        let l = log_loss(&set(&[0.5, 0.5, 0.5], &[1, 0, 1])).unwrap();
        assert!((l - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn log_loss_perfect_predictions_tiny() {
        let l = log_loss(&set(&[1.0, 0.0], &[1, 0])).unwrap();
        assert!(l > 0.0 && l < 2e-6);
    }

    #[test]
    fn log_loss_is_mean_of_per_example_values() {
        let scores = [0.3, 0.9, 0.123, 0.77];
        let labels = [0u8, 1, 1, 0];
        let batch = log_loss(&set(&scores, &labels)).unwrap();
        let naive: f64 = scores
            .iter()
            .zip(&labels)
            .map(|(&s, &y)| log_loss(&set(&[s], &[y])).unwrap())
            .sum::<f64>()
            / 4.0;
        assert!((batch - naive).abs() < 1e-12);
    }

    #[test]
    fn constant_predictor_at_ctr_gives_ne_one_exactly() {
        // p = 0.25
        let s = set(&[0.25, 0.25, 0.25, 0.25], &[1, 0, 0, 0]);
        assert_eq!(ne(&s).unwrap(), 1.0);
        assert_eq!(rig(&s).unwrap(), 0.0);

        // p = 0.5
        let s = set(&[0.5, 0.5], &[1, 0]);
        assert_eq!(ne(&s).unwrap(), 1.0);
    }

    #[test]
    fn perfect_predictions_drive_ne_to_zero() {
        let s = set(&[1.0, 1.0, 0.0, 0.0], &[1, 1, 0, 0]);
        let v = ne(&s).unwrap();
        assert!(v >= 0.0 && v < 1e-5, "ne = {v}");
        assert!(rig(&s).unwrap() > 1.0 - 1e-5);
    }

    #[test]
    fn ne_rejects_degenerate_ctr() {
        assert!(matches!(
            ne(&set(&[0.5, 0.5], &[1, 1])),
            Err(MetricError::SingleClass)
        ));
    }

    proptest! {
        #[test]
        fn auc_matches_pairwise_oracle(
            rows in proptest::collection::vec((0u8..2, 0u32..64), 2..200)
        ) {
            let labels: Vec<u8> = rows.iter().map(|&(y, _)| y).collect();
            // Coarse score grid to force plenty of ties.
            let scores: Vec<f64> = rows.iter().map(|&(_, s)| s as f64 / 64.0).collect();
            let s = set(&scores, &labels);
            let n_pos = labels.iter().filter(|&&y| y == 1).count();
            if n_pos == 0 || n_pos == labels.len() {
                prop_assert!(matches!(auc(&s), Err(MetricError::SingleClass)));
                return Ok(());
            }
            let fast = auc(&s).unwrap();

            // O(n^2) pair counting
            let mut wins = 0.0f64;
            let mut pairs = 0.0f64;
            for i in 0..labels.len() {
                for j in 0..labels.len() {
                    if labels[i] == 1 && labels[j] == 0 {
                        pairs += 1.0;
                        if scores[i] > scores[j] {
                            wins += 1.0;
                        } else if scores[i] == scores[j] {
                            wins += 0.5;
                        }
                    }
                }
            }
            prop_assert!((fast - wins / pairs).abs() < 1e-12);
        }

        #[test]
        fn auc_invariant_under_monotone_transform(
            rows in proptest::collection::vec((0u8..2, 0.01f64..0.99), 2..100)
        ) {
            let labels: Vec<u8> = rows.iter().map(|&(y, _)| y).collect();
            let scores: Vec<f64> = rows.iter().map(|&(_, s)| s).collect();
            let n_pos = labels.iter().filter(|&&y| y == 1).count();
            prop_assume!(n_pos > 0 && n_pos < labels.len());
            let base = auc(&set(&scores, &labels)).unwrap();
            let cubed: Vec<f64> = scores.iter().map(|&s| s * s * s).collect();
            let transformed = auc(&set(&cubed, &labels)).unwrap();
            prop_assert!((base - transformed).abs() < 1e-12);
        }

        #[test]
        fn rig_plus_ne_is_one_and_ne_nonnegative(
            rows in proptest::collection::vec((0u8..2, 0.01f64..0.99), 2..100)
        ) {
            let labels: Vec<u8> = rows.iter().map(|&(y, _)| y).collect();
            let scores: Vec<f64> = rows.iter().map(|&(_, s)| s).collect();
            let n_pos = labels.iter().filter(|&&y| y == 1).count();
            prop_assume!(n_pos > 0 && n_pos < labels.len());
            let s = set(&scores, &labels);
            let n = ne(&s).unwrap();
            prop_assert!(n >= 0.0);
            prop_assert_eq!(rig(&s).unwrap(), 1.0 - n);
        }
    }
}
