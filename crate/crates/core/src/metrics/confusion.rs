use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Rows are true classes, columns predicted classes.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    n_classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(n_classes: usize) -> Self {
        ConfusionMatrix {
            n_classes,
            counts: vec![0; n_classes * n_classes],
        }
    }

    pub fn from_counts(rows: &[Vec<u64>]) -> Result<Self> {
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::shape("confusion matrix", "square counts", "ragged rows"));
        }
        Ok(ConfusionMatrix {
            n_classes: n,
            counts: rows.concat(),
        })
    }

    pub fn from_predictions(n_classes: usize, truth: &[usize], predicted: &[usize]) -> Result<Self> {
        if truth.len() != predicted.len() {
            return Err(Error::shape("predictions", truth.len(), predicted.len()));
        }
        let mut cm = ConfusionMatrix::new(n_classes);
        for (&t, &p) in truth.iter().zip(predicted) {
            if t >= n_classes || p >= n_classes {
                return Err(Error::Data(format!("class index outside [0, {n_classes})")));
            }
            cm.counts[t * n_classes + p] += 1;
        }
        Ok(cm)
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn get(&self, truth: usize, predicted: usize) -> u64 {
        self.counts[truth * self.n_classes + predicted]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn rows(&self) -> Vec<Vec<u64>> {
        self.counts.chunks(self.n_classes.max(1)).map(<[u64]>::to_vec).collect()
    }
}

/// Unweighted mean of `2PR / (P + R)` over the classes that occur in the
/// truth or in the predictions. A class in that set whose precision and recall
/// are both zero (present but never hit, or predicted but absent) scores 0.
/// An empty matrix scores 0.
pub fn macro_f1(cm: &ConfusionMatrix) -> f64 {
    let c = cm.n_classes;
    let mut sum = 0.0;
    let mut support = 0usize;
    for k in 0..c {
        let tp = cm.get(k, k) as f64;
        let predicted: u64 = (0..c).map(|t| cm.get(t, k)).sum();
        let actual: u64 = (0..c).map(|p| cm.get(k, p)).sum();
        if predicted + actual == 0 {
            continue;
        }
        support += 1;
        if tp == 0.0 {
            continue;
        }
        let precision = tp / predicted as f64;
        let recall = tp / actual as f64;
        sum += 2.0 * precision * recall / (precision + recall);
    }
    if support == 0 {
        0.0
    } else {
        sum / support as f64
    }
}
