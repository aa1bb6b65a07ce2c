use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Threshold metrics, rank AUC, and the confusion matrix
/// `[[tn, fp], [fn, tp]]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub recall: f64,
    pub precision: f64,
    pub f1: f64,
    pub auc: f64,
    pub confusion: [[usize; 2]; 2],
}

impl MetricsReport {
    pub fn table(&self) -> String {
        format!(
            "| accuracy | recall | precision | f1 | auc |\n|---|---|---|---|---|\n| {:.4} | {:.4} | {:.4} | {:.4} | {:.4} |\n\nconfusion [[tn, fp], [fn, tp]] = {:?}",
            self.accuracy, self.recall, self.precision, self.f1, self.auc, self.confusion
        )
    }
}

/// Area under the ROC curve by pairwise comparison, ties counting one half.
/// Returns 0.5 when either class is absent.
pub fn roc_auc(probs: &[f64], labels: &[u8]) -> f64 {
    let mut pos: Vec<f64> = probs.iter().zip(labels).filter(|(_, &l)| l != 0).map(|(p, _)| *p).collect();
    let neg: Vec<f64> = probs.iter().zip(labels).filter(|(_, &l)| l == 0).map(|(p, _)| *p).collect();
    if pos.is_empty() || neg.is_empty() {
        return 0.5;
    }
    pos.sort_by(f64::total_cmp);
    let mut wins = 0.0;
    for &q in &neg {
        let below = pos.partition_point(|&p| p <= q);
        let strictly_below = pos.partition_point(|&p| p < q);
        wins += (pos.len() - below) as f64 + 0.5 * (below - strictly_below) as f64;
    }
    wins / (pos.len() * neg.len()) as f64
}

pub fn classification_metrics(probs: &[f64], labels: &[u8], threshold: f64) -> Result<MetricsReport> {
    if probs.len() != labels.len() {
        return Err(Error::shape(format!("{} probabilities vs {} labels", probs.len(), labels.len())));
    }
    if probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
        return Err(Error::invalid("probabilities must lie in [0, 1]"));
    }
    let mut c = [[0usize; 2]; 2];
    for (&p, &l) in probs.iter().zip(labels) {
        c[(l != 0) as usize][(p >= threshold) as usize] += 1;
    }
    let [[tn, fp], [fne, tp]] = c;
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fne);
    let f1 = if precision + recall > 0.0 { 2.0 * precision * recall / (precision + recall) } else { 0.0 };
    Ok(MetricsReport {
        accuracy: ratio(tp + tn, probs.len()),
        recall,
        precision,
        f1,
        auc: roc_auc(probs, labels),
        confusion: c,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn examples() {
        let m = classification_metrics(&[0.9, 0.8, 0.3, 0.1], &[1, 1, 0, 0], 0.5).unwrap();
        assert_eq!((m.accuracy, m.auc), (1.0, 1.0));
        let m = classification_metrics(&[0.9, 0.3, 0.8, 0.1], &[1, 1, 0, 0], 0.5).unwrap();
        assert_eq!(m.auc, 0.75);
        assert_eq!(m.confusion, [[1, 1], [1, 1]]);
        assert_eq!(m.precision, 0.5);
        assert_eq!(m.f1, 0.5);
        assert_eq!(roc_auc(&[0.5; 4], &[1, 0, 1, 0]), 0.5);
    }

    proptest! {
        #[test]
        fn auc_invariant_under_monotone_maps(probs in proptest::collection::vec(0.0f64..1.0, 2..40), seed in 0u64..1000) {
            let labels: Vec<u8> = (0..probs.len()).map(|i| ((i as u64 * 7 + seed) % 3 == 0) as u8).collect();
            let squashed: Vec<f64> = probs.iter().map(|p| p.powi(3)).collect();
            prop_assert!((roc_auc(&probs, &labels) - roc_auc(&squashed, &labels)).abs() < 1e-12);
        }

        #[test]
        fn confusion_sums_to_n(probs in proptest::collection::vec(0.0f64..1.0, 1..40)) {
            let labels: Vec<u8> = (0..probs.len()).map(|i| (i % 2) as u8).collect();
            let m = classification_metrics(&probs, &labels, 0.5).unwrap();
            prop_assert_eq!(m.confusion.iter().flatten().sum::<usize>(), probs.len());
        }
    }
}
