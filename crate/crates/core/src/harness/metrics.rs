use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{bail_arg, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

/// Classification metrics. `confusion[t][p]` counts samples of true class
/// `t` predicted as `p`. A class with no true and no predicted samples has
/// F1 = 0 and still counts toward the macro average.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub macro_f1: f64,
    pub per_class: Vec<ClassMetrics>,
    pub confusion: Vec<Vec<u64>>,
    pub count: u64,
}

impl MetricsReport {
    pub fn from_predictions(labels: &[usize], predictions: &[usize], num_classes: usize) -> Result<Self> {
        if labels.len() != predictions.len() {
            bail_arg!("{} labels but {} predictions", labels.len(), predictions.len());
        }
        if labels.is_empty() {
            bail_arg!("cannot score an empty prediction set");
        }
        let mut confusion = vec![vec![0u64; num_classes]; num_classes];
        for (&t, &p) in labels.iter().zip(predictions) {
            if t >= num_classes || p >= num_classes {
                bail_arg!("class index out of range for {num_classes} classes");
            }
            confusion[t][p] += 1;
        }
        Ok(Self::from_confusion(confusion))
    }

    pub fn from_confusion(confusion: Vec<Vec<u64>>) -> Self {
        let m = confusion.len();
        let count: u64 = confusion.iter().flatten().sum();
        let correct: u64 = (0..m).map(|c| confusion[c][c]).sum();
        let ratio = |a: u64, b: u64| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let per_class: Vec<ClassMetrics> = (0..m)
            .map(|c| {
                let tp = confusion[c][c];
                let support: u64 = confusion[c].iter().sum();
                let predicted: u64 = confusion.iter().map(|row| row[c]).sum();
                let precision = ratio(tp, predicted);
                let recall = ratio(tp, support);
                let f1 = if precision + recall == 0.0 { 0.0 } else { 2.0 * precision * recall / (precision + recall) };
                ClassMetrics { precision, recall, f1, support }
            })
            .collect();
        let macro_f1 = per_class.iter().map(|c| c.f1).sum::<f64>() / m as f64;
        Self { accuracy: ratio(correct, count), macro_f1, per_class, confusion, count }
    }

    /// Human-readable table.
    pub fn to_table(&self, class_names: &[String]) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{:<12} {:>9} {:>9} {:>9} {:>8}", "class", "precision", "recall", "f1", "support");
        for (i, c) in self.per_class.iter().enumerate() {
            let name = class_names.get(i).map(String::as_str).unwrap_or("?");
            let _ = writeln!(s, "{name:<12} {:>9.4} {:>9.4} {:>9.4} {:>8}", c.precision, c.recall, c.f1, c.support);
        }
        let _ = writeln!(s, "accuracy {:.4}  macro-F1 {:.4}  n = {}", self.accuracy, self.macro_f1, self.count);
        s
    }

    /// `class,precision,recall,f1,support` rows followed by summary rows.
    pub fn to_csv(&self, class_names: &[String]) -> String {
        let mut s = String::from("class,precision,recall,f1,support\n");
        for (i, c) in self.per_class.iter().enumerate() {
            let name = class_names.get(i).map(String::as_str).unwrap_or("?");
            let _ = writeln!(s, "{name},{},{},{},{}", c.precision, c.recall, c.f1, c.support);
        }
        let _ = writeln!(s, "accuracy,,,{},{}", self.accuracy, self.count);
        let _ = writeln!(s, "macro_f1,,,{},{}", self.macro_f1, self.count);
        s
    }
}

/// Mean and sample standard deviation (`n − 1` denominator; 0 for `n = 1`).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn hand_cases() {
        let perfect = MetricsReport::from_predictions(&[0, 1, 2, 1], &[0, 1, 2, 1], 3).unwrap();
        assert_eq!((perfect.accuracy, perfect.macro_f1), (1.0, 1.0));

        let one_class = MetricsReport::from_predictions(&[0, 0, 1, 1], &[0, 0, 0, 0], 2).unwrap();
        assert_eq!(one_class.accuracy, 0.5);
        assert!((one_class.macro_f1 - 1.0 / 3.0).abs() < 1e-12);

        let swapped = MetricsReport::from_predictions(&[0, 1, 0, 1], &[1, 0, 1, 0], 2).unwrap();
        assert_eq!((swapped.accuracy, swapped.macro_f1), (0.0, 0.0));

        let absent = MetricsReport::from_predictions(&[0, 1], &[0, 1], 3).unwrap();
        assert!((absent.macro_f1 - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn errors() {
        assert!(MetricsReport::from_predictions(&[], &[], 2).is_err());
        assert!(MetricsReport::from_predictions(&[0], &[2], 2).is_err());
        assert!(MetricsReport::from_predictions(&[0, 1], &[0], 2).is_err());
    }

    #[test]
    fn mean_and_sample_std() {
        assert_eq!(mean_std(&[0.5]), (0.5, 0.0));
        let (m, s) = mean_std(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, 2.5);
        assert!((s - (5.0f64 / 3.0).sqrt()).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn consistent_with_recount(pairs in prop::collection::vec((0usize..4, 0usize..4), 1..80)) {
            let (labels, preds): (Vec<usize>, Vec<usize>) = pairs.into_iter().unzip();
            let r = MetricsReport::from_predictions(&labels, &preds, 4).unwrap();
            let hits = labels.iter().zip(&preds).filter(|(a, b)| a == b).count();
            prop_assert_eq!(r.accuracy, hits as f64 / labels.len() as f64);
            let mean_f1 = r.per_class.iter().map(|c| c.f1).sum::<f64>() / 4.0;
            prop_assert!((r.macro_f1 - mean_f1).abs() < 1e-15);
            prop_assert!((0.0..=1.0).contains(&r.macro_f1));
            prop_assert_eq!(r.count as usize, labels.len());
        }
    }
}
