//! Binary classification metrics: thresholded precision/recall/F1/accuracy
//! and rank-based ROC AUC.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Decision threshold used unless a caller overrides it.
pub const DEFAULT_THRESHOLD: f64 = 0.5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("{scores} scores but {labels} labels")]
    LengthMismatch { scores: usize, labels: usize },
    #[error("no samples to evaluate")]
    Empty,
    #[error("label {0} is not 0 or 1")]
    BadLabel(u8),
    #[error("score at index {0} is not finite")]
    NonFinite(usize),
    #[error("AUC is undefined when every label is {0}")]
    UndefinedAuc(u8),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl Confusion {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }
}

fn validate(scores: &[f64], labels: &[u8]) -> Result<(), MetricsError> {
    if scores.len() != labels.len() {
        return Err(MetricsError::LengthMismatch {
            scores: scores.len(),
            labels: labels.len(),
        });
    }
    if scores.is_empty() {
        return Err(MetricsError::Empty);
    }
    if let Some(&l) = labels.iter().find(|&&l| l > 1) {
        return Err(MetricsError::BadLabel(l));
    }
    if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
        return Err(MetricsError::NonFinite(i));
    }
    Ok(())
}

/// Counts outcomes with "predicted positive" meaning `score >= threshold`.
pub fn confusion(scores: &[f64], labels: &[u8], threshold: f64) -> Result<Confusion, MetricsError> {
    validate(scores, labels)?;
    let mut c = Confusion::default();
    for (&s, &l) in scores.iter().zip(labels) {
        match (s >= threshold, l == 1) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, false) => c.tn += 1,
            (false, true) => c.fn_ += 1,
        }
    }
    Ok(c)
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Rates {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub accuracy: f64,
}

fn ratio(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

/// Precision, recall, F1 and accuracy. Any ratio whose denominator is zero
/// is reported as 0; the names of such metrics come back in the second slot.
pub fn prf1(c: Confusion) -> (Rates, Vec<&'static str>) {
    let mut degenerate = Vec::new();
    let mut take = |name, v: Option<f64>| {
        v.unwrap_or_else(|| {
            degenerate.push(name);
            0.0
        })
    };
    let precision = take("precision", ratio(c.tp, c.tp + c.fp));
    let recall = take("recall", ratio(c.tp, c.tp + c.fn_));
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        take("f1", None)
    };
    let accuracy = take("accuracy", ratio(c.tp + c.tn, c.total()));
    (
        Rates {
            precision,
            recall,
            f1,
            accuracy,
        },
        degenerate,
    )
}

/// Area under the ROC curve as the Mann–Whitney statistic: the fraction of
/// (positive, negative) pairs ranked correctly, ties counting one half.
/// Computed from average ranks in integer (doubled) form, so the result is
/// the exact rational rounded once.
pub fn auc(scores: &[f64], labels: &[u8]) -> Result<f64, MetricsError> {
    validate(scores, labels)?;
    let pos = labels.iter().filter(|&&l| l == 1).count() as u64;
    let neg = labels.len() as u64 - pos;
    if pos == 0 {
        return Err(MetricsError::UndefinedAuc(0));
    }
    if neg == 0 {
        return Err(MetricsError::UndefinedAuc(1));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Sum of doubled average ranks over positives.
    let mut rank2_pos: u64 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        // Ranks i+1 ..= j share the average (i+1+j)/2.
        let doubled = (i + 1 + j) as u64;
        let positives = order[i..j].iter().filter(|&&k| labels[k] == 1).count() as u64;
        rank2_pos += doubled * positives;
        i = j;
    }
    let u2 = rank2_pos - pos * (pos + 1);
    Ok(u2 as f64 / (2 * pos * neg) as f64)
}

/// Everything one evaluation run reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    #[serde(flatten)]
    pub confusion: Confusion,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub accuracy: f64,
    /// `None` when the labels contain a single class.
    pub auc: Option<f64>,
    pub threshold: f64,
    pub n: usize,
    /// Metrics that hit a zero denominator (reported as 0) or are undefined.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub degenerate: Vec<String>,
}

impl MetricsReport {
    pub fn compute(scores: &[f64], labels: &[u8], threshold: f64) -> Result<Self, MetricsError> {
        let c = confusion(scores, labels, threshold)?;
        let (r, degenerate) = prf1(c);
        let mut degenerate: Vec<String> = degenerate.into_iter().map(String::from).collect();
        let auc = match auc(scores, labels) {
            Ok(a) => Some(a),
            Err(MetricsError::UndefinedAuc(_)) => {
                degenerate.push("auc".into());
                None
            }
            Err(e) => return Err(e),
        };
        Ok(Self {
            confusion: c,
            precision: r.precision,
            recall: r.recall,
            f1: r.f1,
            accuracy: r.accuracy,
            auc,
            threshold,
            n: scores.len(),
            degenerate,
        })
    }
}

impl fmt::Display for MetricsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let auc = self
            .auc
            .map_or_else(|| "undefined".to_string(), |a| format!("{a:.4}"));
        write!(
            f,
            "n={} P={:.4} R={:.4} F1={:.4} Acc={:.4} AUC={} (tp={} fp={} tn={} fn={}, t={})",
            self.n,
            self.precision,
            self.recall,
            self.f1,
            self.accuracy,
            auc,
            self.confusion.tp,
            self.confusion.fp,
            self.confusion.tn,
            self.confusion.fn_,
            self.threshold
        )
    }
}
