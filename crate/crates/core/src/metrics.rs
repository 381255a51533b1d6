//! Confusion-matrix metrics and rank-based AUC-ROC. Intrinsic (1) is the
//! positive class.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("length mismatch: {truth} labels vs {pred} predictions")]
    Length { truth: usize, pred: usize },
    #[error("no samples to evaluate")]
    Empty,
    #[error("AUC undefined: only one class present")]
    SingleClass,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

/// A metric value; `degenerate` marks a zero denominator (value is then 0).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ratio {
    pub value: f64,
    pub degenerate: bool,
}

fn ratio(num: f64, den: f64) -> Ratio {
    if den == 0.0 {
        Ratio {
            value: 0.0,
            degenerate: true,
        }
    } else {
        Ratio {
            value: num / den,
            degenerate: false,
        }
    }
}

impl ConfusionCounts {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn precision(&self) -> Ratio {
        ratio(self.tp as f64, (self.tp + self.fp) as f64)
    }

    pub fn recall(&self) -> Ratio {
        ratio(self.tp as f64, (self.tp + self.fn_) as f64)
    }

    pub fn accuracy(&self) -> Ratio {
        ratio((self.tp + self.tn) as f64, self.total() as f64)
    }

    /// 2TP / (2TP + FP + FN), the harmonic mean of precision and recall.
    pub fn f1(&self) -> Ratio {
        ratio(2.0 * self.tp as f64, (2 * self.tp + self.fp + self.fn_) as f64)
    }
}

pub fn confusion(y_true: &[u8], y_pred: &[u8]) -> Result<ConfusionCounts, MetricError> {
    if y_true.len() != y_pred.len() {
        return Err(MetricError::Length {
            truth: y_true.len(),
            pred: y_pred.len(),
        });
    }
    if y_true.is_empty() {
        return Err(MetricError::Empty);
    }
    let mut c = ConfusionCounts::default();
    for (&t, &p) in y_true.iter().zip(y_pred) {
        match (t != 0, p != 0) {
            (true, true) => c.tp += 1,
            (false, true) => c.fp += 1,
            (false, false) => c.tn += 1,
            (true, false) => c.fn_ += 1,
        }
    }
    Ok(c)
}

/// Mann-Whitney form with midranks for tied scores:
/// (R+ - n+(n+ + 1)/2) / (n+ n-).
pub fn auc_roc(y_true: &[u8], scores: &[f64]) -> Result<f64, MetricError> {
    if y_true.len() != scores.len() {
        return Err(MetricError::Length {
            truth: y_true.len(),
            pred: scores.len(),
        });
    }
    let n_pos = y_true.iter().filter(|&&y| y != 0).count();
    let n_neg = y_true.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(MetricError::SingleClass);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // ranks i+1 ..= j+1 share their mean
        let midrank = (i + j + 2) as f64 / 2.0;
        let pos_in_group = order[i..=j].iter().filter(|&&k| y_true[k] != 0).count();
        rank_sum_pos += midrank * pos_in_group as f64;
        i = j + 1;
    }
    let (np, nn) = (n_pos as f64, n_neg as f64);
    Ok((rank_sum_pos - np * (np + 1.0) / 2.0) / (np * nn))
}

/// Everything reported per evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricSet {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub accuracy: f64,
    pub auc: f64,
    /// Names of metrics whose denominator was zero.
    #[serde(default, skip_serializing_if = "Degenerate::is_none")]
    pub degenerate: Degenerate,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Degenerate {
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub precision: bool,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub recall: bool,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub f1: bool,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub auc: bool,
}

impl Degenerate {
    pub fn is_none(&self) -> bool {
        *self == Degenerate::default()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MetricName {
    Precision,
    Recall,
    F1,
    Accuracy,
    Auc,
}

impl MetricName {
    pub const ALL: [MetricName; 5] = [
        MetricName::Precision,
        MetricName::Recall,
        MetricName::F1,
        MetricName::Accuracy,
        MetricName::Auc,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            MetricName::Precision => "precision",
            MetricName::Recall => "recall",
            MetricName::F1 => "f1",
            MetricName::Accuracy => "accuracy",
            MetricName::Auc => "auc",
        }
    }
}

impl std::fmt::Display for MetricName {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for MetricName {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        MetricName::ALL
            .into_iter()
            .find(|m| {
                m.as_str().eq_ignore_ascii_case(s) || (s.eq_ignore_ascii_case("auc-roc") && *m == MetricName::Auc)
            })
            .ok_or_else(|| format!("unknown metric {s:?}"))
    }
}

impl MetricSet {
    /// AUC falls back to 0.5 (flagged degenerate) when only one class is
    /// present in `y_true`.
    pub fn evaluate(y_true: &[u8], y_pred: &[u8], scores: &[f64]) -> Result<MetricSet, MetricError> {
        let c = confusion(y_true, y_pred)?;
        let (p, r, f, a) = (c.precision(), c.recall(), c.f1(), c.accuracy());
        let (auc, auc_degenerate) = match auc_roc(y_true, scores) {
            Ok(v) => (v, false),
            Err(MetricError::SingleClass) => (0.5, true),
            Err(e) => return Err(e),
        };
        Ok(MetricSet {
            precision: p.value,
            recall: r.value,
            f1: f.value,
            accuracy: a.value,
            auc,
            degenerate: Degenerate {
                precision: p.degenerate,
                recall: r.degenerate,
                f1: f.degenerate,
                auc: auc_degenerate,
            },
        })
    }

    pub fn get(&self, name: MetricName) -> f64 {
        match name {
            MetricName::Precision => self.precision,
            MetricName::Recall => self.recall,
            MetricName::F1 => self.f1,
            MetricName::Accuracy => self.accuracy,
            MetricName::Auc => self.auc,
        }
    }
}
