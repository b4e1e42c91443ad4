use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{HarError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
    pub predicted: usize,
    /// Set when precision or recall had a zero denominator and was scored 0.
    pub zero_division: bool,
}

/// Scalar scores in `[0, 1]`. Names say how each one averages over classes.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    /// Micro accuracy.
    pub accuracy: f64,
    /// Per-class scores weighted by class support.
    pub support_weighted_precision: f64,
    pub support_weighted_recall: f64,
    pub support_weighted_f1: f64,
    /// Unweighted means over the classes that occur in truths or predictions.
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    /// Equal to `macro_recall`.
    pub balanced_accuracy: f64,
}

impl MetricSummary {
    pub const FIELDS: [&'static str; 8] = [
        "accuracy",
        "support_weighted_precision",
        "support_weighted_recall",
        "support_weighted_f1",
        "macro_precision",
        "macro_recall",
        "macro_f1",
        "balanced_accuracy",
    ];

    pub fn values(&self) -> [f64; 8] {
        [
            self.accuracy,
            self.support_weighted_precision,
            self.support_weighted_recall,
            self.support_weighted_f1,
            self.macro_precision,
            self.macro_recall,
            self.macro_f1,
            self.balanced_accuracy,
        ]
    }

    fn from_values(v: [f64; 8]) -> Self {
        MetricSummary {
            accuracy: v[0],
            support_weighted_precision: v[1],
            support_weighted_recall: v[2],
            support_weighted_f1: v[3],
            macro_precision: v[4],
            macro_recall: v[5],
            macro_f1: v[6],
            balanced_accuracy: v[7],
        }
    }

    /// Field-wise arithmetic mean.
    pub fn mean(items: &[MetricSummary]) -> MetricSummary {
        let mut acc = [0.0; 8];
        for m in items {
            for (a, v) in acc.iter_mut().zip(m.values()) {
                *a += v;
            }
        }
        let n = items.len().max(1) as f64;
        MetricSummary::from_values(acc.map(|a| a / n))
    }

    /// The metric names used in published result tables, in percent. Plain precision,
    /// recall and F1 there are support-weighted; the "weighted" ones are macro averages.
    pub fn paper_view(&self) -> BTreeMap<&'static str, f64> {
        BTreeMap::from([
            ("Accuracy", 100.0 * self.accuracy),
            ("Precision", 100.0 * self.support_weighted_precision),
            ("Recall", 100.0 * self.support_weighted_recall),
            ("F1-score", 100.0 * self.support_weighted_f1),
            ("Balance Accuracy", 100.0 * self.balanced_accuracy),
            ("Weighted Precision", 100.0 * self.macro_precision),
            ("Weighted Recall", 100.0 * self.macro_recall),
            ("Weighted F1-score", 100.0 * self.macro_f1),
        ])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// `confusion[true][predicted]`.
    pub confusion: Vec<Vec<usize>>,
    pub per_class: Vec<ClassScores>,
    pub metrics: MetricSummary,
    pub samples: usize,
}

fn ratio(num: usize, den: usize) -> (f64, bool) {
    if den == 0 {
        (0.0, true)
    } else {
        (num as f64 / den as f64, false)
    }
}

pub fn compute_metrics(predictions: &[usize], truths: &[usize], classes: usize) -> Result<EvalReport> {
    if predictions.len() != truths.len() {
        return Err(HarError::invalid(format!(
            "{} predictions for {} truths",
            predictions.len(),
            truths.len()
        )));
    }
    if let Some(l) = predictions.iter().chain(truths).find(|l| **l >= classes) {
        return Err(HarError::invalid(format!("label {l} outside {classes} classes")));
    }
    let n = truths.len();
    let mut confusion = vec![vec![0usize; classes]; classes];
    for (&p, &t) in predictions.iter().zip(truths) {
        confusion[t][p] += 1;
    }
    let per_class: Vec<ClassScores> = (0..classes)
        .map(|c| {
            let tp = confusion[c][c];
            let support: usize = confusion[c].iter().sum();
            let predicted: usize = confusion.iter().map(|row| row[c]).sum();
            let (precision, zp) = ratio(tp, predicted);
            let (recall, zr) = ratio(tp, support);
            let f1 = if precision + recall > 0.0 { 2.0 * precision * recall / (precision + recall) } else { 0.0 };
            ClassScores { precision, recall, f1, support, predicted, zero_division: zp || zr }
        })
        .collect();

    let correct: usize = (0..classes).map(|c| confusion[c][c]).sum();
    let present: Vec<&ClassScores> = per_class.iter().filter(|s| s.support > 0 || s.predicted > 0).collect();
    let weighted = |f: fn(&ClassScores) -> f64| {
        if n == 0 {
            0.0
        } else {
            per_class.iter().map(|s| f(s) * s.support as f64).sum::<f64>() / n as f64
        }
    };
    let macro_avg = |f: fn(&ClassScores) -> f64| {
        if present.is_empty() {
            0.0
        } else {
            present.iter().map(|s| f(s)).sum::<f64>() / present.len() as f64
        }
    };
    let macro_recall = macro_avg(|s| s.recall);
    let metrics = MetricSummary {
        accuracy: if n == 0 { 0.0 } else { correct as f64 / n as f64 },
        support_weighted_precision: weighted(|s| s.precision),
        support_weighted_recall: weighted(|s| s.recall),
        support_weighted_f1: weighted(|s| s.f1),
        macro_precision: macro_avg(|s| s.precision),
        macro_recall,
        macro_f1: macro_avg(|s| s.f1),
        balanced_accuracy: macro_recall,
    };
    Ok(EvalReport { confusion, per_class, metrics, samples: n })
}

/// Confusion matrix as CSV with class names on both axes (rows are true classes).
pub fn confusion_csv(confusion: &[Vec<usize>], classes: &[String]) -> String {
    let quote = |s: &str| if s.contains(',') { format!("\"{s}\"") } else { s.to_string() };
    let mut out = String::from("true\\predicted");
    for c in classes {
        out.push(',');
        out.push_str(&quote(c));
    }
    out.push('\n');
    for (c, row) in classes.iter().zip(confusion) {
        out.push_str(&quote(c));
        for v in row {
            out.push_str(&format!(",{v}"));
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn from_confusion(m: &[[usize; 2]; 2]) -> (Vec<usize>, Vec<usize>) {
        let (mut p, mut t) = (Vec::new(), Vec::new());
        for (ti, row) in m.iter().enumerate() {
            for (pi, &count) in row.iter().enumerate() {
                for _ in 0..count {
                    t.push(ti);
                    p.push(pi);
                }
            }
        }
        (p, t)
    }

    #[test]
    fn perfect_predictions() {
        let t = vec![0, 1, 2, 2, 1];
        let r = compute_metrics(&t, &t, 3).unwrap();
        assert!(r.metrics.values().iter().all(|v| *v == 1.0));
        for (i, row) in r.confusion.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                assert_eq!(*v > 0, i == j);
            }
        }
    }

    #[test]
    fn hand_computed_two_class_case() {
        let (p, t) = from_confusion(&[[3, 1], [2, 4]]);
        let r = compute_metrics(&p, &t, 2).unwrap();
        assert_eq!(r.confusion, vec![vec![3, 1], vec![2, 4]]);
        assert!((r.metrics.accuracy - 0.7).abs() < 1e-12);
        assert!((r.per_class[0].precision - 0.6).abs() < 1e-12);
        assert!((r.per_class[1].precision - 0.8).abs() < 1e-12);
        assert!((r.metrics.macro_recall - (0.75 + 4.0 / 6.0) / 2.0).abs() < 1e-12);
        assert_eq!(r.metrics.balanced_accuracy, r.metrics.macro_recall);
    }

    #[test]
    fn constant_prediction_on_balanced_data() {
        let t = vec![0, 0, 1, 1];
        let r = compute_metrics(&[0, 0, 0, 0], &t, 2).unwrap();
        assert!((r.metrics.balanced_accuracy - 0.5).abs() < 1e-12);
        assert!(r.per_class[1].zero_division);
    }

    #[test]
    fn weighted_recall_is_accuracy() {
        let p = vec![0, 2, 1, 1, 0, 2, 2, 1, 0, 0];
        let t = vec![0, 1, 1, 2, 0, 2, 0, 1, 1, 0];
        let r = compute_metrics(&p, &t, 3).unwrap();
        assert!((r.metrics.support_weighted_recall - r.metrics.accuracy).abs() < 1e-12);
        for (row, s) in r.confusion.iter().zip(&r.per_class) {
            assert_eq!(row.iter().sum::<usize>(), s.support);
        }
    }

    #[test]
    fn absent_classes_are_left_out_of_macro() {
        let r = compute_metrics(&[0, 1], &[0, 1], 4).unwrap();
        assert_eq!(r.metrics.macro_f1, 1.0);
    }

    #[test]
    fn length_mismatch_errors() {
        assert!(compute_metrics(&[0], &[0, 1], 2).is_err());
        assert!(compute_metrics(&[3], &[0], 2).is_err());
    }

    #[test]
    fn paper_view_maps_names() {
        let (p, t) = from_confusion(&[[3, 1], [2, 4]]);
        let v = compute_metrics(&p, &t, 2).unwrap().metrics.paper_view();
        assert_eq!(v["Balance Accuracy"], v["Weighted Recall"]);
        assert!((v["Accuracy"] - 70.0).abs() < 1e-9);
    }

    #[test]
    fn confusion_csv_has_headers() {
        let csv = confusion_csv(&[vec![1, 0], vec![2, 3]], &["Sleep".into(), "Cook".into()]);
        assert_eq!(csv, "true\\predicted,Sleep,Cook\nSleep,1,0\nCook,2,3\n");
    }
}
