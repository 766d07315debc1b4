//! Scalar comparison metrics: R², MAPE, macro F1 and Spearman's rank correlation.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Guard for zero-valued targets in [`mape`], in months.
pub const DEFAULT_MAPE_EPSILON: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegressionScore {
    pub r2: f64,
    /// Fraction, not percent.
    pub mape: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationScore {
    pub f1_macro: f64,
    pub per_class: Vec<ClassScore>,
}

fn check_lengths(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(invalid(format!("length mismatch: {a} vs {b}")));
    }
    if a == 0 {
        return Err(invalid("empty input"));
    }
    Ok(())
}

/// Coefficient of determination. Errors when `y` is constant, where the
/// statistic has no finite value.
pub fn r2_score(y: &[f64], y_hat: &[f64]) -> Result<f64> {
    check_lengths(y.len(), y_hat.len())?;
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    let ss_tot: f64 = y.iter().map(|v| (v - mean).powi(2)).sum();
    if ss_tot == 0.0 {
        return Err(Error::UndefinedMetric("R² of a constant target".into()));
    }
    let ss_res: f64 = y.iter().zip(y_hat).map(|(a, b)| (a - b).powi(2)).sum();
    Ok(1.0 - ss_res / ss_tot)
}

pub fn mape(y: &[f64], y_hat: &[f64], epsilon: f64) -> Result<f64> {
    check_lengths(y.len(), y_hat.len())?;
    let total: f64 = y
        .iter()
        .zip(y_hat)
        .map(|(a, b)| (a - b).abs() / epsilon.max(a.abs()))
        .sum();
    Ok(total / y.len() as f64)
}

pub fn regression_score(y: &[f64], y_hat: &[f64], epsilon: f64) -> Result<RegressionScore> {
    Ok(RegressionScore {
        r2: r2_score(y, y_hat)?,
        mape: mape(y, y_hat, epsilon)?,
    })
}

/// Macro-averaged F1 over all `num_classes` classes. A class that is neither
/// present nor predicted contributes 0.
pub fn f1_multiclass(y: &[usize], y_hat: &[usize], num_classes: usize) -> Result<ClassificationScore> {
    check_lengths(y.len(), y_hat.len())?;
    if num_classes == 0 {
        return Err(invalid("need at least one class"));
    }
    let mut tp = vec![0usize; num_classes];
    let mut predicted = vec![0usize; num_classes];
    let mut actual = vec![0usize; num_classes];
    for (&t, &p) in y.iter().zip(y_hat) {
        if t >= num_classes || p >= num_classes {
            return Err(invalid(format!("label out of range 0..{num_classes}")));
        }
        actual[t] += 1;
        predicted[p] += 1;
        if t == p {
            tp[t] += 1;
        }
    }
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    let per_class: Vec<ClassScore> = (0..num_classes)
        .map(|c| {
            let precision = ratio(tp[c], predicted[c]);
            let recall = ratio(tp[c], actual[c]);
            let f1 = if precision + recall > 0.0 {
                2.0 * precision * recall / (precision + recall)
            } else {
                0.0
            };
            ClassScore {
                precision,
                recall,
                f1,
                support: actual[c],
            }
        })
        .collect();
    let f1_macro = per_class.iter().map(|c| c.f1).sum::<f64>() / num_classes as f64;
    Ok(ClassificationScore { f1_macro, per_class })
}

/// 1-based ranks with ties replaced by their average rank.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && values[order[end]] == values[order[start]] {
            end += 1;
        }
        // positions start..end hold ranks start+1..=end
        let rank = (start + end + 1) as f64 / 2.0;
        for &idx in &order[start..end] {
            ranks[idx] = rank;
        }
        start = end;
    }
    ranks
}

pub fn pearson_r(x: &[f64], y: &[f64]) -> Result<f64> {
    check_lengths(x.len(), y.len())?;
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (da, db) = (a - mx, b - my);
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::UndefinedMetric("correlation with a constant vector".into()));
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Spearman's rank correlation, computed as the Pearson correlation of
/// average ranks so ties are handled.
pub fn spearman_r(x: &[f64], y: &[f64]) -> Result<f64> {
    check_lengths(x.len(), y.len())?;
    if x.len() < 2 {
        return Err(invalid("spearman_r needs at least two points"));
    }
    pearson_r(&average_ranks(x), &average_ranks(y))
}
