use serde::{Deserialize, Serialize};

use crate::dataset::ENGAGED;
use crate::{Error, Result};

/// (TP + TN) / (TP + FP + TN + FN).
pub fn accuracy(tp: u64, tn: u64, fp: u64, fn_: u64) -> Result<f64> {
    let total = tp + tn + fp + fn_;
    if total == 0 {
        return Err(Error::Metric("accuracy of an empty evaluation".into()));
    }
    Ok((tp + tn) as f64 / total as f64)
}

/// Harmonic mean of precision and recall; 0 when either is undefined.
pub fn f1(tp: u64, fp: u64, fn_: u64) -> f64 {
    if tp + fp == 0 || tp + fn_ == 0 || tp == 0 {
        return 0.0;
    }
    let p = tp as f64 / (tp + fp) as f64;
    let r = tp as f64 / (tp + fn_) as f64;
    2.0 * p * r / (p + r)
}

/// True when F1 fell back to 0 because precision or recall has a zero
/// denominator.
pub fn f1_is_degenerate(tp: u64, fp: u64, fn_: u64) -> bool {
    tp + fp == 0 || tp + fn_ == 0
}

/// Area under the ROC curve as the Mann-Whitney statistic: the chance that a
/// random positive is scored above a random negative, ties counting one half.
pub fn auc(scores: &[f64], positives: &[bool]) -> Result<f64> {
    if scores.len() != positives.len() {
        return Err(Error::Shape(format!(
            "{} scores for {} labels",
            scores.len(),
            positives.len()
        )));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Metric("NaN score".into()));
    }
    let n_pos = positives.iter().filter(|&&p| p).count() as u64;
    let n_neg = positives.len() as u64 - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::Metric("AUC needs both classes present".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    // Ranks are 1-based; tied groups share their average rank. Everything is
    // kept doubled so the statistic stays an exact integer.
    let mut doubled_rank_sum_pos: u64 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let doubled_avg_rank = (i + 1 + j + 1) as u64;
        let pos_in_group = order[i..=j].iter().filter(|&&k| positives[k]).count() as u64;
        doubled_rank_sum_pos += doubled_avg_rank * pos_in_group;
        i = j + 1;
    }
    let doubled_u = doubled_rank_sum_pos - n_pos * (n_pos + 1);
    Ok(doubled_u as f64 / 2.0 / (n_pos * n_neg) as f64)
}

/// Two-class confusion matrix. Rows are the actual class, columns the
/// predicted one, both ordered (engaged, disengaged).
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: [[u64; 2]; 2],
}

impl ConfusionMatrix {
    pub fn from_counts(tp: u64, fn_: u64, fp: u64, tn: u64) -> Self {
        ConfusionMatrix {
            counts: [[tp, fn_], [fp, tn]],
        }
    }

    pub fn tp(&self) -> u64 {
        self.counts[0][0]
    }
    pub fn fn_(&self) -> u64 {
        self.counts[0][1]
    }
    pub fn fp(&self) -> u64 {
        self.counts[1][0]
    }
    pub fn tn(&self) -> u64 {
        self.counts[1][1]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    /// Each row as percentages of its actual class; an empty row is all zero.
    pub fn row_percentages(&self) -> [[f64; 2]; 2] {
        let mut out = [[0.0; 2]; 2];
        for (r, row) in self.counts.iter().enumerate() {
            let n = row[0] + row[1];
            if n > 0 {
                out[r] = [100.0 * row[0] as f64 / n as f64, 100.0 * row[1] as f64 / n as f64];
            }
        }
        out
    }

    pub fn accuracy(&self) -> Result<f64> {
        accuracy(self.tp(), self.tn(), self.fp(), self.fn_())
    }

    pub fn f1(&self) -> f64 {
        f1(self.tp(), self.fp(), self.fn_())
    }
}

/// Tallies predicted against actual class ids (engaged = 1 is positive).
pub fn confusion(predictions: &[u8], labels: &[u8]) -> Result<ConfusionMatrix> {
    if predictions.len() != labels.len() {
        return Err(Error::Shape(format!(
            "{} predictions for {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    if predictions.is_empty() {
        return Err(Error::Metric("confusion matrix of an empty evaluation".into()));
    }
    let mut m = ConfusionMatrix::default();
    for (&p, &y) in predictions.iter().zip(labels) {
        let row = if y == ENGAGED { 0 } else { 1 };
        let col = if p == ENGAGED { 0 } else { 1 };
        m.counts[row][col] += 1;
    }
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn accuracy_examples() {
        assert_eq!(accuracy(1, 1, 0, 0).unwrap(), 1.0);
        assert_eq!(accuracy(0, 0, 1, 1).unwrap(), 0.0);
        assert!(accuracy(0, 0, 0, 0).is_err());
    }

    #[test]
    fn f1_examples() {
        // p = r = 0.75
        assert!((f1(3, 1, 1) - 0.75).abs() < 1e-15);
        assert_eq!(f1(0, 3, 2), 0.0);
        assert_eq!(f1(0, 0, 0), 0.0);
        assert!(f1_is_degenerate(0, 0, 4));
    }

    #[test]
    fn auc_examples() {
        assert_eq!(auc(&[0.9, 0.8, 0.2, 0.1], &[true, true, false, false]).unwrap(), 1.0);
        assert_eq!(auc(&[0.5; 4], &[true, false, true, false]).unwrap(), 0.5);
        assert_eq!(auc(&[0.9, 0.4, 0.6], &[true, false, true]).unwrap(), 1.0);
        assert!(auc(&[0.1, 0.2], &[true, true]).is_err());
    }

    #[test]
    fn confusion_layout() {
        let m = confusion(&[1, 1, 0, 0, 1], &[1, 0, 0, 1, 1]).unwrap();
        assert_eq!(m.tp(), 2);
        assert_eq!(m.fp(), 1);
        assert_eq!(m.tn(), 1);
        assert_eq!(m.fn_(), 1);
        assert!(confusion(&[], &[]).is_err());
        let all = confusion(&[1, 0], &[1, 0]).unwrap();
        assert_eq!(all.row_percentages(), [[100.0, 0.0], [0.0, 100.0]]);
    }

    fn brute_auc(scores: &[f64], pos: &[bool]) -> f64 {
        let (mut num, mut den) = (0.0, 0.0);
        for i in 0..scores.len() {
            for j in 0..scores.len() {
                if pos[i] && !pos[j] {
                    den += 1.0;
                    if scores[i] > scores[j] {
                        num += 1.0;
                    } else if scores[i] == scores[j] {
                        num += 0.5;
                    }
                }
            }
        }
        num / den
    }

    fn scored_labels() -> impl Strategy<Value = (Vec<f64>, Vec<bool>)> {
        proptest::collection::vec((0u8..20, any::<bool>()), 2..40)
            .prop_filter("both classes", |v| v.iter().any(|x| x.1) && v.iter().any(|x| !x.1))
            .prop_map(|v| v.into_iter().map(|(s, p)| (s as f64 / 20.0, p)).unzip())
    }

    proptest! {
        #[test]
        fn auc_matches_pairwise((scores, pos) in scored_labels()) {
            prop_assert_eq!(auc(&scores, &pos).unwrap(), brute_auc(&scores, &pos));
        }

        #[test]
        fn auc_monotone_invariance((scores, pos) in scored_labels()) {
            let warped: Vec<f64> = scores.iter().map(|s| (3.0 * s).exp() - 7.0).collect();
            prop_assert_eq!(auc(&scores, &pos).unwrap(), auc(&warped, &pos).unwrap());
        }

        #[test]
        fn metrics_ignore_order((scores, pos) in scored_labels(), seed in any::<u64>()) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let preds: Vec<u8> = scores.iter().map(|&s| (s >= 0.5) as u8).collect();
            let labels: Vec<u8> = pos.iter().map(|&p| p as u8).collect();
            let m = confusion(&preds, &labels).unwrap();
            let mut idx: Vec<usize> = (0..preds.len()).collect();
            idx.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            let p2: Vec<u8> = idx.iter().map(|&i| preds[i]).collect();
            let l2: Vec<u8> = idx.iter().map(|&i| labels[i]).collect();
            let m2 = confusion(&p2, &l2).unwrap();
            prop_assert_eq!(m, m2);
            prop_assert_eq!(m.f1(), m2.f1());
        }
    }

    #[test]
    fn flipped_labels_complement_without_ties() {
        let scores: Vec<f64> = (0..30).map(|i| ((i * 37) % 101) as f64).collect();
        let pos: Vec<bool> = (0..30).map(|i| i % 3 == 0).collect();
        let flipped: Vec<bool> = pos.iter().map(|p| !p).collect();
        let sum = auc(&scores, &pos).unwrap() + auc(&scores, &flipped).unwrap();
        assert!((sum - 1.0).abs() < 1e-12);
    }
}
