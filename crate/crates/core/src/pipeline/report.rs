use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{FitScope, RunConfig, SmotePlacement};
use crate::learners::{Family, ModelConfig};
use crate::metrics::MetricSet;
use crate::tuning::{GridResult, MetricValues};

pub const SCHEMA_VERSION: u32 = 1;

pub const REFIT_POLICY: &str =
    "best config per family refit on the full SMOTE-balanced training split; holdout metrics computed on the untouched test split";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusInfo {
    pub path: String,
    pub fingerprint: String,
    pub n_reports: usize,
    pub n_intrinsic: usize,
    pub n_non_intrinsic: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitInfo {
    pub seed: u64,
    pub ratio: f64,
    pub stratified: bool,
    pub n_train: usize,
    pub n_test: usize,
    /// (NonIntrinsic, Intrinsic)
    pub train_class_counts: [usize; 2],
    pub test_class_counts: [usize; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingInfo {
    /// `tfidf` or `dense`.
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fit_scope: Option<FitScope>,
    pub n_features: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_fit_documents: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model_name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub manifest: Option<String>,
}

impl EmbeddingInfo {
    pub fn display_name(&self) -> String {
        match (&*self.kind, &self.model_name) {
            ("tfidf", _) => "TF-IDF".to_string(),
            (_, Some(name)) => name.clone(),
            (kind, None) => kind.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmoteInfo {
    pub placement: SmotePlacement,
    pub k_neighbors: usize,
    pub seed: u64,
    /// Rows added to the training split for the refit.
    pub synthetic_rows: usize,
    pub balanced_class_counts: [usize; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FamilyReport {
    pub family: Family,
    pub model: String,
    pub best_config: ModelConfig,
    pub best_cv_mean: MetricValues,
    pub best_cv_std: MetricValues,
    pub holdout: MetricSet,
    pub refit_seed: u64,
    pub grid: GridResult,
}

impl FamilyReport {
    pub fn new(grid: GridResult, holdout: MetricSet, refit_seed: u64) -> Self {
        let best = grid.best();
        let (mean, std) = match &best.outcome {
            crate::tuning::Outcome::Ok { mean, std, .. } => (*mean, *std),
            crate::tuning::Outcome::Failed { .. } => unreachable!("a failed config is never selected"),
        };
        FamilyReport {
            family: grid.family,
            model: grid.family.display_name().to_string(),
            best_config: best.config.clone(),
            best_cv_mean: mean,
            best_cv_std: std,
            holdout,
            refit_seed,
            grid,
        }
    }
}

/// Excluded from report comparisons.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub started_at_unix: u64,
    pub wall_clock_secs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub schema_version: u32,
    pub tool_version: String,
    pub config: RunConfig,
    pub corpus: CorpusInfo,
    pub split: SplitInfo,
    pub embedding: EmbeddingInfo,
    pub smote: SmoteInfo,
    pub refit: String,
    pub families: Vec<FamilyReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timing: Option<Timing>,
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}

/// The report JSON with the timing field removed, for comparing runs.
pub fn canonical_json(report: &EvalReport) -> String {
    EvalReport {
        timing: None,
        ..report.clone()
    }
    .to_json()
}

/// Percentage with one decimal, rounded half-to-even on the shortest
/// decimal form of `v` (the digits the JSON report stores), so the table is
/// recomputable from the JSON alone.
fn pct(v: f64) -> String {
    if !v.is_finite() {
        return format!("{v}%");
    }
    let text = format!("{}", v.abs());
    let (int, frac) = text.split_once('.').unwrap_or((&text, ""));
    let mut digits: Vec<u8> = int.bytes().chain(frac.bytes()).map(|b| b - b'0').collect();
    // value = 0.digits * 10^point; keep everything up to one place past the
    // percent's decimal point
    let keep = int.len() + 3;
    digits.resize(digits.len().max(keep), 0);
    let (head, rest) = digits.split_at(keep);
    let mut head = head.to_vec();
    let round_up = match rest.split_first() {
        Some((&first, tail)) if first > 5 || (first == 5 && tail.iter().any(|&d| d > 0)) => true,
        Some((&5, _)) => head.last().is_some_and(|d| d % 2 == 1),
        _ => false,
    };
    if round_up {
        let mut i = head.len();
        loop {
            if i == 0 {
                head.insert(0, 1);
                break;
            }
            i -= 1;
            if head[i] == 9 {
                head[i] = 0;
            } else {
                head[i] += 1;
                break;
            }
        }
    }
    let split = head.len() - 1;
    let whole: String = head[..split].iter().map(|d| char::from(b'0' + d)).collect();
    let whole = whole.trim_start_matches('0');
    let sign = if v < 0.0 && head.iter().any(|&d| d > 0) {
        "-"
    } else {
        ""
    };
    format!("{sign}{}.{}%", if whole.is_empty() { "0" } else { whole }, head[split])
}

/// One results table per embedding source, then the selected configurations.
pub fn render_markdown(report: &EvalReport) -> String {
    render_markdown_many(std::slice::from_ref(report))
}

pub fn render_markdown_many(reports: &[EvalReport]) -> String {
    let mut md = String::from("# Intrinsic bug classification results\n");
    for r in reports {
        let _ = write!(
            md,
            "\n## {} on {}\n\nCorpus `{}`: {} reports ({} intrinsic, {} non-intrinsic), fingerprint `{}`.\n\
             Holdout {} of {} reports (stratified, seed {}). SMOTE {} (k = {}). Selection metric: {}.\n\n",
            r.embedding.display_name(),
            r.config.text_field.as_str(),
            r.corpus.path,
            r.corpus.n_reports,
            r.corpus.n_intrinsic,
            r.corpus.n_non_intrinsic,
            &r.corpus.fingerprint[..r.corpus.fingerprint.len().min(12)],
            r.split.n_test,
            r.corpus.n_reports,
            r.split.seed,
            match r.smote.placement {
                SmotePlacement::BeforeCv => "before cross-validation",
                SmotePlacement::PerFold => "per training fold",
            },
            r.smote.k_neighbors,
            r.config.select_metric,
        );
        md.push_str("| Model | Precision | Recall | F1 | AUC-ROC |\n|---|---|---|---|---|\n");
        for f in &r.families {
            let h = &f.holdout;
            let _ = writeln!(
                md,
                "| {} | {} | {} | {} | {} |",
                f.model,
                pct(h.precision),
                pct(h.recall),
                pct(h.f1),
                pct(h.auc)
            );
        }
        md.push_str("\n| Model | Best configuration | CV F1 (mean ± std) | Failed configs |\n|---|---|---|---|\n");
        for f in &r.families {
            let _ = writeln!(
                md,
                "| {} | {} | {} ± {} | {} |",
                f.model,
                f.best_config.summary(),
                pct(f.best_cv_mean.f1),
                pct(f.best_cv_std.f1),
                f.grid.failed().count()
            );
        }
    }
    md
}

/// One holdout prediction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRow {
    pub family: Family,
    pub bug_id: String,
    pub label: u8,
    pub score: f64,
    pub prediction: u8,
}

pub fn predictions_csv(rows: &[PredictionRow]) -> Result<Vec<u8>, csv::Error> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    w.into_inner().map_err(|e| e.into_error().into())
}

pub fn read_predictions(bytes: &[u8]) -> Result<Vec<PredictionRow>, csv::Error> {
    csv::Reader::from_reader(bytes).deserialize().collect()
}
