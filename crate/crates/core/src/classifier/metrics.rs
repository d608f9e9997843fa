//! Binary classification metrics.

use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::cohort::Label;
use crate::error::{check_len, Error, Result};

fn class_counts(labels: &[Label]) -> (usize, usize) {
    let pos = labels.iter().filter(|l| l.is_positive()).count();
    (pos, labels.len() - pos)
}

/// Area under the ROC curve: the probability that a random positive scores
/// above a random negative, ties counting one half. Computed from midranks.
pub fn auc(scores: &[f64], labels: &[Label]) -> Result<f64> {
    check_len("auc labels", scores.len(), labels.len())?;
    let (n_pos, n_neg) = class_counts(labels);
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::Undefined(format!(
            "AUC needs both classes ({n_pos} positive, {n_neg} negative)"
        )));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Undefined("AUC of NaN scores".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut pos_rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // Ranks are 1-based; the tied block i..=j shares the mean rank.
        let mid = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            if labels[k].is_positive() {
                pos_rank_sum += mid;
            }
        }
        i = j + 1;
    }
    let (p, n) = (n_pos as f64, n_neg as f64);
    Ok((pos_rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

/// Threshold metrics for the positive (MCI) class.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BinaryMetrics {
    pub sensitivity: f64,
    pub specificity: f64,
    pub f1: f64,
}

/// Sensitivity, specificity and F1 for predictions `p >= threshold`. An
/// undefined ratio (no positives, no predicted positives) is reported as 0.
pub fn binary_metrics(probabilities: &[f64], labels: &[Label], threshold: f64) -> Result<BinaryMetrics> {
    check_len("metric labels", probabilities.len(), labels.len())?;
    let (mut tp, mut fp, mut tn, mut fneg) = (0usize, 0usize, 0usize, 0usize);
    for (&p, l) in probabilities.iter().zip(labels) {
        match (p >= threshold, l.is_positive()) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, false) => tn += 1,
            (false, true) => fneg += 1,
        }
    }
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    let precision = ratio(tp, tp + fp);
    let sensitivity = ratio(tp, tp + fneg);
    let f1 = if precision + sensitivity == 0.0 {
        0.0
    } else {
        2.0 * precision * sensitivity / (precision + sensitivity)
    };
    Ok(BinaryMetrics {
        sensitivity,
        specificity: ratio(tn, tn + fp),
        f1,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use Label::{Mci as P, Normal as N};

    #[test]
    fn auc_examples() {
        assert_eq!(auc(&[0.1, 0.4, 0.35, 0.8], &[N, N, P, P]).unwrap(), 0.75);
        assert_eq!(auc(&[0.1, 0.2, 0.8, 0.9], &[N, N, P, P]).unwrap(), 1.0);
        assert_eq!(auc(&[0.3; 4], &[N, P, N, P]).unwrap(), 0.5);
        assert!(matches!(auc(&[0.1, 0.2], &[P, P]), Err(Error::Undefined(_))));
    }

    #[test]
    fn threshold_metrics() {
        let m = binary_metrics(&[0.9, 0.6, 0.4, 0.2], &[P, N, P, N], 0.5).unwrap();
        assert_eq!(m.sensitivity, 0.5);
        assert_eq!(m.specificity, 0.5);
        assert_eq!(m.f1, 0.5);
        let none = binary_metrics(&[0.1, 0.1], &[P, N], 0.5).unwrap();
        assert_eq!(none.f1, 0.0);
        assert_eq!(none.specificity, 1.0);
    }
}
