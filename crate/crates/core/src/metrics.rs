//! Per-step classification metrics over non-sentinel examples.
//!
//! Sensitivity, specificity, precision and F1 are one-vs-rest per class and
//! macro-averaged over the classes that occur in the labels; a zero
//! denominator contributes 0. AUC is the Mann–Whitney statistic with
//! mid-rank ties, macro-averaged over classes with both positives and
//! negatives. All reported values are percentages.

use std::fmt::Write as _;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::numerics::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepMetrics {
    pub step: String,
    pub count: usize,
    pub accuracy: f64,
    /// `None` when fewer than two classes occur.
    pub auc: Option<f64>,
    pub sensitivity: f64,
    pub specificity: f64,
    pub f1: f64,
    pub precision: f64,
    /// Set when the row was computed from zero valid examples.
    pub empty: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct StepReport {
    pub steps: Vec<StepMetrics>,
}

impl StepReport {
    /// Unweighted mean accuracy over steps that have valid examples.
    pub fn mean_accuracy(&self) -> f64 {
        let rows: Vec<f64> = self
            .steps
            .iter()
            .filter(|s| !s.empty)
            .map(|s| s.accuracy)
            .collect();
        if rows.is_empty() {
            0.0
        } else {
            rows.iter().sum::<f64>() / rows.len() as f64
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Aligned plain-text table, one row per step.
    pub fn to_table(&self) -> String {
        let width = self
            .steps
            .iter()
            .map(|s| s.step.len())
            .max()
            .unwrap_or(4)
            .max(4);
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<width$}  {:>6}  {:>8}  {:>6}  {:>11}  {:>11}  {:>8}  {:>9}",
            "Step", "N", "Accuracy", "AUC", "Sensitivity", "Specificity", "F1-Score", "Precision"
        );
        for s in &self.steps {
            let auc = s.auc.map_or_else(|| "-".to_string(), |a| format!("{a:.1}"));
            let _ = writeln!(
                out,
                "{:<width$}  {:>6}  {:>8.1}  {:>6}  {:>11.1}  {:>11.1}  {:>8.1}  {:>9.1}",
                s.step, s.count, s.accuracy, auc, s.sensitivity, s.specificity, s.f1, s.precision
            );
        }
        out
    }
}

fn argmax(row: &[f64]) -> usize {
    row.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &v)| {
            if v > bv {
                (i, v)
            } else {
                (bi, bv)
            }
        })
        .0
}

fn check(probs: &Tensor, labels: &[i64], sentinel: i64) -> Result<(usize, Vec<usize>)> {
    let Some((rows, classes)) = probs.dims2() else {
        return Err(Error::shape(
            "per_step_metrics",
            &probs.shape,
            &[labels.len()],
        ));
    };
    if rows != labels.len() {
        return Err(Error::shape(
            "per_step_metrics",
            &probs.shape,
            &[labels.len()],
        ));
    }
    let valid = crate::numerics::valid_rows(labels, classes, sentinel)?;
    Ok((classes, valid))
}

/// `matrix[truth][predicted]` over valid rows, predictions by argmax.
pub fn confusion_matrix(probs: &Tensor, labels: &[i64], sentinel: i64) -> Result<Vec<Vec<usize>>> {
    let (classes, valid) = check(probs, labels, sentinel)?;
    let mut m = vec![vec![0; classes]; classes];
    for r in valid {
        m[labels[r] as usize][argmax(probs.row(r))] += 1;
    }
    Ok(m)
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn per_step_metrics(
    step: &str,
    probs: &Tensor,
    labels: &[i64],
    sentinel: i64,
) -> Result<StepMetrics> {
    let m = confusion_matrix(probs, labels, sentinel)?;
    let classes = m.len();
    let total: usize = m.iter().flatten().sum();
    if total == 0 {
        return Ok(StepMetrics {
            step: step.to_string(),
            count: 0,
            accuracy: 0.0,
            auc: None,
            sensitivity: 0.0,
            specificity: 0.0,
            f1: 0.0,
            precision: 0.0,
            empty: true,
        });
    }
    let correct: usize = (0..classes).map(|k| m[k][k]).sum();
    let present: Vec<usize> = (0..classes)
        .filter(|&k| m[k].iter().sum::<usize>() > 0)
        .collect();
    let (mut sens, mut spec, mut prec, mut f1) = (0.0, 0.0, 0.0, 0.0);
    for &k in &present {
        let tp = m[k][k];
        let fn_ = m[k].iter().sum::<usize>() - tp;
        let fp = (0..classes).map(|t| m[t][k]).sum::<usize>() - tp;
        let tn = total - tp - fn_ - fp;
        sens += ratio(tp, tp + fn_);
        spec += ratio(tn, tn + fp);
        prec += ratio(tp, tp + fp);
        f1 += ratio(2 * tp, 2 * tp + fp + fn_);
    }
    let n = present.len() as f64;
    Ok(StepMetrics {
        step: step.to_string(),
        count: total,
        accuracy: 100.0 * ratio(correct, total),
        auc: macro_auc(probs, labels, sentinel)?.map(|a| 100.0 * a),
        sensitivity: 100.0 * sens / n,
        specificity: 100.0 * spec / n,
        f1: 100.0 * f1 / n,
        precision: 100.0 * prec / n,
        empty: false,
    })
}

/// Mann–Whitney AUC of `scores` for a binary split, ties at mid-rank.
pub fn binary_auc(scores: &[f64], positive: &[bool]) -> Option<f64> {
    let n_pos = positive.iter().filter(|p| **p).count();
    let n_neg = positive.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // ranks i+1 ..= j+1 share their mean
        let mid = (i + j + 2) as f64 / 2.0;
        rank_sum += order[i..=j].iter().filter(|&&k| positive[k]).count() as f64 * mid;
        i = j + 1;
    }
    let u = rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Some(u / (n_pos * n_neg) as f64)
}

/// Macro one-vs-rest AUC in `[0, 1]`; `None` when fewer than two distinct
/// labels occur among valid rows.
pub fn macro_auc(probs: &Tensor, labels: &[i64], sentinel: i64) -> Result<Option<f64>> {
    let (classes, valid) = check(probs, labels, sentinel)?;
    let mut aucs = Vec::new();
    for k in 0..classes {
        let scores: Vec<f64> = valid.iter().map(|&r| probs.row(r)[k]).collect();
        let pos: Vec<bool> = valid.iter().map(|&r| labels[r] as usize == k).collect();
        aucs.extend(binary_auc(&scores, &pos));
    }
    Ok(if aucs.is_empty() {
        None
    } else {
        Some(aucs.iter().sum::<f64>() / aucs.len() as f64)
    })
}
