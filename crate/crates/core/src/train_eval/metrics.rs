use std::fmt;

use serde::{Deserialize, Serialize};

use crate::triplets::NA;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelMetrics {
    pub label: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Bags whose true label is this one.
    pub support: usize,
}

/// Bag-level classification metrics. Confusion rows are true labels,
/// columns predictions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub labels: Vec<String>,
    pub total: usize,
    pub overall_accuracy: f64,
    /// Exact-label accuracy over bags whose true label is not `NA`; 0 when
    /// there are none.
    pub positive_accuracy: f64,
    /// One-vs-rest scores for each non-`NA` label.
    pub per_label: Vec<LabelMetrics>,
    pub confusion: Vec<Vec<usize>>,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn f1_score(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

impl Metrics {
    /// Builds metrics from `(true, predicted)` label indices.
    pub fn from_pairs(labels: &[String], pairs: &[(usize, usize)]) -> Self {
        let n = labels.len();
        let mut confusion = vec![vec![0usize; n]; n];
        for &(t, p) in pairs {
            confusion[t][p] += 1;
        }
        let total = pairs.len();
        let correct: usize = (0..n).map(|i| confusion[i][i]).sum();
        let na = labels.iter().position(|l| l == NA);
        let (mut pos_total, mut pos_correct) = (0, 0);
        for (i, row) in confusion.iter().enumerate() {
            if Some(i) != na {
                pos_total += row.iter().sum::<usize>();
                pos_correct += row[i];
            }
        }
        let per_label = (0..n)
            .filter(|&i| Some(i) != na)
            .map(|i| {
                let tp = confusion[i][i];
                let support: usize = confusion[i].iter().sum();
                let predicted: usize = confusion.iter().map(|row| row[i]).sum();
                let precision = ratio(tp, predicted);
                let recall = ratio(tp, support);
                LabelMetrics {
                    label: labels[i].clone(),
                    precision,
                    recall,
                    f1: f1_score(precision, recall),
                    support,
                }
            })
            .collect();
        Metrics {
            labels: labels.to_vec(),
            total,
            overall_accuracy: ratio(correct, total),
            positive_accuracy: ratio(pos_correct, pos_total),
            per_label,
            confusion,
        }
    }

    pub fn to_json(&self) -> serde_json::Result<String> {
        serde_json::to_string_pretty(self)
    }
}

impl fmt::Display for Metrics {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "bags               {}", self.total)?;
        writeln!(f, "overall accuracy   {:.4}", self.overall_accuracy)?;
        writeln!(f, "positive accuracy  {:.4}", self.positive_accuracy)?;
        writeln!(f)?;
        writeln!(f, "{:<10} {:>9} {:>9} {:>9} {:>8}", "label", "precision", "recall", "f1", "support")?;
        for m in &self.per_label {
            writeln!(
                f,
                "{:<10} {:>9.4} {:>9.4} {:>9.4} {:>8}",
                m.label, m.precision, m.recall, m.f1, m.support
            )?;
        }
        writeln!(f)?;
        write!(f, "{:<10}", "true\\pred")?;
        for l in &self.labels {
            write!(f, " {l:>6}")?;
        }
        writeln!(f)?;
        for (l, row) in self.labels.iter().zip(&self.confusion) {
            write!(f, "{l:<10}")?;
            for c in row {
                write!(f, " {c:>6}")?;
            }
            writeln!(f)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn labels(n: usize) -> Vec<String> {
        std::iter::once(NA.to_string())
            .chain((1..n).map(|i| format!("R{i}")))
            .collect()
    }

    #[test]
    fn perfect_predictor() {
        let l = labels(3);
        let pairs: Vec<_> = [0, 1, 2, 1, 0].iter().map(|&i| (i, i)).collect();
        let m = Metrics::from_pairs(&l, &pairs);
        assert_eq!(m.overall_accuracy, 1.0);
        assert_eq!(m.positive_accuracy, 1.0);
        assert!(m.per_label.iter().all(|x| x.precision == 1.0 && x.recall == 1.0 && x.f1 == 1.0));
    }

    #[test]
    fn two_label_arithmetic() {
        // TP=1, FP=1, FN=0, TN=2 for the positive label
        let pairs = [(1, 1), (0, 1), (0, 0), (0, 0)];
        let m = Metrics::from_pairs(&labels(2), &pairs);
        let r = &m.per_label[0];
        assert_eq!(r.precision, 0.5);
        assert_eq!(r.recall, 1.0);
        assert!((r.f1 - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(m.overall_accuracy, 0.75);
    }

    #[test]
    fn f1_is_zero_without_hits() {
        assert_eq!(f1_score(0.0, 0.0), 0.0);
        let m = Metrics::from_pairs(&labels(2), &[(0, 0), (1, 0)]);
        assert_eq!(m.per_label[0].f1, 0.0);
        assert_eq!(m.positive_accuracy, 0.0);
    }

    proptest! {
        #[test]
        fn identities_hold(pairs in prop::collection::vec((0usize..4, 0usize..4), 1..60)) {
            let l = labels(4);
            let m = Metrics::from_pairs(&l, &pairs);
            let diag: usize = (0..4).map(|i| m.confusion[i][i]).sum();
            let sum: usize = m.confusion.iter().flatten().sum();
            prop_assert_eq!(m.overall_accuracy, diag as f64 / sum as f64);
            for (k, lm) in m.per_label.iter().enumerate() {
                let i = k + 1;
                let support = pairs.iter().filter(|p| p.0 == i).count();
                prop_assert_eq!(lm.support, support);
                prop_assert_eq!(m.confusion[i].iter().sum::<usize>(), support);
                prop_assert!((lm.recall * support as f64 - m.confusion[i][i] as f64).abs() < 1e-9);
            }
        }
    }
}
