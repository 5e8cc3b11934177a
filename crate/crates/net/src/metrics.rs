//! Confusion matrices and per-class accuracy, precision and recall.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub support: usize,
    /// One-vs-rest accuracy `(TP + TN) / total`.
    pub accuracy: f64,
    /// `TP / (TP + FP)`, 0 when nothing was predicted as this class.
    pub precision: f64,
    /// `TP / (TP + FN)`, 0 when the class has no support.
    pub recall: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    /// `confusion[true][predicted]`.
    pub confusion: Vec<Vec<usize>>,
    /// Overall fraction correct.
    pub accuracy: f64,
    pub per_class: Vec<ClassMetrics>,
    /// Classes with no samples; their recall is 0 by convention.
    pub empty_support: Vec<usize>,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

impl Metrics {
    pub fn from_predictions(labels: &[usize], predictions: &[usize], classes: usize) -> Self {
        let mut confusion = vec![vec![0; classes]; classes];
        for (&t, &p) in labels.iter().zip(predictions) {
            confusion[t][p] += 1;
        }
        Self::from_confusion(confusion)
    }

    pub fn from_confusion(confusion: Vec<Vec<usize>>) -> Self {
        let k = confusion.len();
        let total: usize = confusion.iter().flatten().sum();
        let correct: usize = (0..k).map(|c| confusion[c][c]).sum();
        let per_class = (0..k)
            .map(|c| {
                let tp = confusion[c][c];
                let support: usize = confusion[c].iter().sum();
                let predicted: usize = (0..k).map(|r| confusion[r][c]).sum();
                let tn = total + tp - support - predicted;
                ClassMetrics {
                    support,
                    accuracy: ratio(tp + tn, total),
                    precision: ratio(tp, predicted),
                    recall: ratio(tp, support),
                }
            })
            .collect::<Vec<_>>();
        let empty_support = per_class
            .iter()
            .enumerate()
            .filter(|(_, m)| m.support == 0)
            .map(|(c, _)| c)
            .collect();
        Self {
            accuracy: ratio(correct, total),
            confusion,
            per_class,
            empty_support,
        }
    }

    /// Element-wise sum of confusion matrices, recomputed.
    pub fn pooled<'a>(all: impl IntoIterator<Item = &'a Metrics>) -> Option<Self> {
        let mut it = all.into_iter();
        let mut acc = it.next()?.confusion.clone();
        for m in it {
            for (row, other) in acc.iter_mut().zip(&m.confusion) {
                for (a, b) in row.iter_mut().zip(other) {
                    *a += b;
                }
            }
        }
        Some(Self::from_confusion(acc))
    }
}
