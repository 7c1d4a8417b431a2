//! Binary classification metrics.

use crate::error::{MafError, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub tn: usize,
}

impl Confusion {
    pub fn from_predictions(preds: &[usize], labels: &[usize], positive: usize) -> Result<Self> {
        check_lengths(preds, labels)?;
        let mut c = Confusion::default();
        for (&p, &l) in preds.iter().zip(labels) {
            match (p == positive, l == positive) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, true) => c.fn_ += 1,
                (false, false) => c.tn += 1,
            }
        }
        Ok(c)
    }

    /// `2PR/(P+R)`, or 0 when there are no true positives.
    pub fn f1(&self) -> f64 {
        if self.tp == 0 {
            return 0.0;
        }
        let precision = self.tp as f64 / (self.tp + self.fp) as f64;
        let recall = self.tp as f64 / (self.tp + self.fn_) as f64;
        2.0 * precision * recall / (precision + recall)
    }
}

fn check_lengths(preds: &[usize], labels: &[usize]) -> Result<()> {
    if preds.len() != labels.len() {
        return Err(MafError::Contract(format!(
            "{} predictions for {} labels",
            preds.len(),
            labels.len()
        )));
    }
    if preds.is_empty() {
        return Err(MafError::Contract("metrics over an empty set".into()));
    }
    Ok(())
}

/// Fraction of predictions equal to their label.
pub fn accuracy(preds: &[usize], labels: &[usize]) -> Result<f64> {
    check_lengths(preds, labels)?;
    let hits = preds.iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok(hits as f64 / preds.len() as f64)
}

/// F1 score for `positive_class`.
pub fn f1_score(preds: &[usize], labels: &[usize], positive_class: usize) -> Result<f64> {
    Ok(Confusion::from_predictions(preds, labels, positive_class)?.f1())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn accuracy_examples() {
        assert_eq!(accuracy(&[1, 0, 1], &[1, 0, 1]).unwrap(), 1.0);
        assert_eq!(accuracy(&[1, 0, 1, 1], &[1, 1, 1, 0]).unwrap(), 0.5);
        assert_eq!(accuracy(&[0, 1], &[1, 0]).unwrap(), 0.0);
    }

    #[test]
    fn accuracy_rejects_bad_lengths() {
        assert!(accuracy(&[], &[]).is_err());
        assert!(accuracy(&[1], &[1, 0]).is_err());
        assert!(f1_score(&[1], &[1, 0], 1).is_err());
    }

    #[test]
    fn f1_examples() {
        assert_eq!(f1_score(&[1, 0, 1], &[1, 0, 1], 1).unwrap(), 1.0);
        assert_eq!(f1_score(&[0, 0, 0, 0], &[1, 0, 1, 0], 1).unwrap(), 0.0);
        // TP=2, FP=1, FN=1
        let f = f1_score(&[1, 1, 1, 0, 0], &[1, 1, 0, 1, 0], 1).unwrap();
        assert!((f - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn f1_depends_on_positive_class() {
        let preds = [1, 1, 1, 0];
        let labels = [1, 1, 0, 0];
        let pos1 = f1_score(&preds, &labels, 1).unwrap();
        let pos0 = f1_score(&preds, &labels, 0).unwrap();
        assert!((pos1 - 0.8).abs() < 1e-15);
        assert!((pos0 - 2.0 / 3.0).abs() < 1e-15);
        let flipped: Vec<usize> = preds.iter().map(|p| 1 - p).collect();
        let flipped_l: Vec<usize> = labels.iter().map(|l| 1 - l).collect();
        assert_eq!(f1_score(&flipped, &flipped_l, 0).unwrap(), pos1);
    }
}
