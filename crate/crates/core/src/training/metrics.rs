use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Top-1 accuracy, per-class accuracy and the confusion matrix (rows are
/// true classes, columns predictions).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    /// `None` for classes without support.
    pub per_class_accuracy: Vec<Option<f64>>,
    pub confusion: Vec<Vec<u64>>,
    pub support: Vec<u64>,
    pub total: u64,
    /// Mean cross-entropy, when known.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub loss: Option<f64>,
}

impl Metrics {
    pub fn from_predictions(labels: &[usize], predictions: &[usize], num_classes: usize) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::Domain("cannot compute metrics on an empty set".into()));
        }
        if labels.len() != predictions.len() {
            return Err(Error::Domain(format!(
                "{} labels but {} predictions",
                labels.len(),
                predictions.len()
            )));
        }
        let mut confusion = vec![vec![0u64; num_classes]; num_classes];
        for (&y, &p) in labels.iter().zip(predictions) {
            if y >= num_classes || p >= num_classes {
                return Err(Error::Domain(format!("class index out of range for {num_classes} classes")));
            }
            confusion[y][p] += 1;
        }
        let support: Vec<u64> = confusion.iter().map(|r| r.iter().sum()).collect();
        let total = labels.len() as u64;
        let correct: u64 = (0..num_classes).map(|i| confusion[i][i]).sum();
        let per_class_accuracy = (0..num_classes)
            .map(|i| (support[i] > 0).then(|| confusion[i][i] as f64 / support[i] as f64))
            .collect();
        Ok(Self {
            accuracy: correct as f64 / total as f64,
            per_class_accuracy,
            confusion,
            support,
            total,
            loss: None,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.support.len()
    }

    pub fn correct(&self) -> u64 {
        (0..self.num_classes()).map(|i| self.confusion[i][i]).sum()
    }
}

/// Index of the largest value; the first one wins ties.
pub fn argmax(row: &[f64]) -> usize {
    row.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) })
        .0
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_predictions_give_diagonal() {
        let y = vec![0, 1, 2, 2, 1];
        let m = Metrics::from_predictions(&y, &y, 3).unwrap();
        assert_eq!(m.accuracy, 1.0);
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(m.confusion[i][j] > 0, i == j);
            }
        }
        assert_eq!(m.support, vec![1, 2, 2]);
    }

    #[test]
    fn empty_is_domain_error() {
        assert!(matches!(Metrics::from_predictions(&[], &[], 2), Err(Error::Domain(_))));
    }

    #[test]
    fn argmax_prefers_first_maximum() {
        assert_eq!(argmax(&[0.1, 0.5, 0.5]), 1);
    }
}
