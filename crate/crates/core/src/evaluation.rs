//! ROC AUC, average precision and ROC curves for scored binary examples.

use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("both classes are needed, got {positives} positives and {negatives} negatives")]
    SingleClass { positives: usize, negatives: usize },
    #[error("score {0} is not finite")]
    NonFinite(f64),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoredExample {
    pub score: f64,
    pub label: bool,
}

impl ScoredExample {
    pub fn new(score: f64, label: bool) -> Self {
        Self { score, label }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub fpr: f64,
    pub tpr: f64,
    /// Examples scoring at or above this value are called positive.
    pub threshold: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    pub points: Vec<RocPoint>,
}

impl RocCurve {
    /// Trapezoidal area under the curve.
    pub fn area(&self) -> f64 {
        self.points
            .windows(2)
            .map(|w| (w[1].fpr - w[0].fpr) * (w[1].tpr + w[0].tpr) / 2.0)
            .sum()
    }

    /// Writes `fpr,tpr,threshold` rows under a header.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "fpr,tpr,threshold")?;
        for p in &self.points {
            writeln!(w, "{},{},{}", p.fpr, p.tpr, p.threshold)?;
        }
        Ok(())
    }
}

fn class_counts(examples: &[ScoredExample]) -> Result<(usize, usize), MetricError> {
    if let Some(e) = examples.iter().find(|e| !e.score.is_finite()) {
        return Err(MetricError::NonFinite(e.score));
    }
    let positives = examples.iter().filter(|e| e.label).count();
    let negatives = examples.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(MetricError::SingleClass { positives, negatives });
    }
    Ok((positives, negatives))
}

/// Probability that a random positive outscores a random negative, ties counting one half.
pub fn roc_auc(examples: &[ScoredExample]) -> Result<f64, MetricError> {
    let (n_pos, n_neg) = class_counts(examples)?;
    let mut sorted: Vec<&ScoredExample> = examples.iter().collect();
    sorted.sort_by(|a, b| a.score.total_cmp(&b.score));
    // rank sum of positives with tied groups sharing their average rank
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < sorted.len() {
        let j = i + sorted[i..].iter().take_while(|e| e.score == sorted[i].score).count();
        let avg_rank = (i + 1 + j) as f64 / 2.0;
        rank_sum += avg_rank * sorted[i..j].iter().filter(|e| e.label).count() as f64;
        i = j;
    }
    let u = rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos as f64 * n_neg as f64))
}

/// Sum over ranks holding a positive of `(R_i - R_{i-1}) * P_i`, in descending
/// score order with ties kept in input order.
pub fn average_precision(examples: &[ScoredExample]) -> Result<f64, MetricError> {
    let (n_pos, _) = class_counts(examples)?;
    let mut order: Vec<usize> = (0..examples.len()).collect();
    order.sort_by(|&a, &b| examples[b].score.total_cmp(&examples[a].score));
    let mut hits = 0usize;
    let mut ap = 0.0;
    for (k, &i) in order.iter().enumerate() {
        if examples[i].label {
            hits += 1;
            ap += (hits as f64 / (k + 1) as f64) / n_pos as f64;
        }
    }
    Ok(ap)
}

/// One point per distinct score, from `(0, 0)` to `(1, 1)`.
pub fn roc_curve(examples: &[ScoredExample]) -> Result<RocCurve, MetricError> {
    let (n_pos, n_neg) = class_counts(examples)?;
    let mut sorted: Vec<&ScoredExample> = examples.iter().collect();
    sorted.sort_by(|a, b| b.score.total_cmp(&a.score));
    let mut points = vec![RocPoint {
        fpr: 0.0,
        tpr: 0.0,
        threshold: f64::INFINITY,
    }];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < sorted.len() {
        let s = sorted[i].score;
        while i < sorted.len() && sorted[i].score == s {
            if sorted[i].label {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push(RocPoint {
            fpr: fp as f64 / n_neg as f64,
            tpr: tp as f64 / n_pos as f64,
            threshold: s,
        });
    }
    Ok(RocCurve { points })
}

/// Metrics written by the evaluate command.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub roc_auc: f64,
    pub average_precision: f64,
    pub positives: usize,
    pub negatives: usize,
}

pub fn metrics_report(examples: &[ScoredExample]) -> Result<MetricsReport, MetricError> {
    let (positives, negatives) = class_counts(examples)?;
    Ok(MetricsReport {
        roc_auc: roc_auc(examples)?,
        average_precision: average_precision(examples)?,
        positives,
        negatives,
    })
}
