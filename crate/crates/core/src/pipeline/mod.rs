//! End-to-end experiment: load, label, preprocess, embed, split, balance,
//! tune, refit and evaluate on the holdout. Each stage is also exposed on
//! its own so the CLI can persist and resume intermediate artifacts.

mod report;

pub use report::{
    canonical_json, predictions_csv, read_predictions, render_markdown, render_markdown_many, CorpusInfo,
    EmbeddingInfo, EvalReport, FamilyReport, PredictionRow, SmoteInfo, SplitInfo, Timing, REFIT_POLICY, SCHEMA_VERSION,
};

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::balance::{smote, SmoteConfig};
use crate::corpus::{self, Corpus, CorpusFormat, SplitPlan};
use crate::exec::Exec;
use crate::features::{self, FeatureMatrix, FeatureSource};
use crate::learners::{self, Family, ModelConfig, ModelFile, TrainedModel};
use crate::metrics::{MetricName, MetricSet};
use crate::seed::{derive_indexed, derive_seed};
use crate::textprep::{Document, KnownProjects, Preprocessor, TextField};
use crate::tuning::{self, GridResult, SearchOptions};

pub const CACHE_ENV: &str = "BUGGIN_CACHE";

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid run config: {0}")]
    Config(String),
    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<dyn std::error::Error + Send + Sync>,
    },
}

fn stage<E: std::error::Error + Send + Sync + 'static>(stage: &'static str) -> impl FnOnce(E) -> PipelineError {
    move |e| PipelineError::Stage {
        stage,
        source: Box::new(e),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum EmbeddingSource {
    Tfidf,
    Dense { manifest: PathBuf },
}

/// Which documents the TF-IDF vocabulary and idf are fitted on.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FitScope {
    /// Every document, before the split.
    #[default]
    Full,
    /// Training documents only.
    Train,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SmotePlacement {
    /// Once on the training split, before cross-validation.
    BeforeCv,
    /// Inside every cross-validation training fold.
    PerFold,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub corpus: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub format: Option<CorpusFormat>,
    pub text_field: TextField,
    pub embedding: EmbeddingSource,
    pub families: Vec<Family>,
    pub folds: usize,
    pub seed: u64,
    pub holdout_ratio: f64,
    pub smote_k: usize,
    pub smote_per_fold: bool,
    pub fit_scope: FitScope,
    pub select_metric: MetricName,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub projects_file: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid_override: Option<Vec<ModelConfig>>,
    pub out: PathBuf,
    #[serde(skip)]
    pub jobs: Option<usize>,
    #[serde(skip)]
    pub exec: Exec,
    #[serde(skip)]
    pub cache_dir: Option<PathBuf>,
}

impl RunConfig {
    pub fn new(corpus: impl Into<PathBuf>, out: impl Into<PathBuf>) -> Self {
        RunConfig {
            corpus: corpus.into(),
            format: None,
            text_field: TextField::Title,
            embedding: EmbeddingSource::Tfidf,
            families: Family::ALL.to_vec(),
            folds: 5,
            seed: 0,
            holdout_ratio: 0.8,
            smote_k: 5,
            smote_per_fold: false,
            fit_scope: FitScope::Full,
            select_metric: MetricName::F1,
            projects_file: None,
            grid_override: None,
            out: out.into(),
            jobs: None,
            exec: Exec::Parallel,
            cache_dir: std::env::var_os(CACHE_ENV).map(PathBuf::from),
        }
    }

    /// Checks everything that can be checked before any compute.
    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: String| Err(PipelineError::Config(m));
        if !self.corpus.is_file() {
            return bad(format!("corpus {} does not exist", self.corpus.display()));
        }
        if let EmbeddingSource::Dense { manifest } = &self.embedding {
            if !manifest.is_file() {
                return bad(format!("embedding manifest {} does not exist", manifest.display()));
            }
        }
        if let Some(p) = &self.projects_file {
            if !p.is_file() {
                return bad(format!("projects file {} does not exist", p.display()));
            }
        }
        if self.folds < 2 {
            return bad(format!("folds must be at least 2, got {}", self.folds));
        }
        if !(self.holdout_ratio > 0.0 && self.holdout_ratio < 1.0) {
            return bad(format!("holdout ratio must be in (0, 1), got {}", self.holdout_ratio));
        }
        if self.smote_k == 0 {
            return bad("smote k must be at least 1".into());
        }
        if self.families.is_empty() {
            return bad("no model families selected".into());
        }
        if let Some(grid) = &self.grid_override {
            for c in grid {
                c.validate()
                    .map_err(|e| PipelineError::Config(format!("grid override: {e}")))?;
            }
            if !self.families.iter().any(|f| grid.iter().any(|c| c.family() == *f)) {
                return bad("grid override has no configs for the selected families".into());
            }
        }
        Ok(())
    }

    pub fn smote_placement(&self) -> SmotePlacement {
        if self.smote_per_fold {
            SmotePlacement::PerFold
        } else {
            SmotePlacement::BeforeCv
        }
    }

    /// The configs searched for `family`: the override's entries for that
    /// family, or the built-in grid.
    pub fn grid_for(&self, family: Family) -> Vec<ModelConfig> {
        match &self.grid_override {
            Some(grid) => grid.iter().filter(|c| c.family() == family).cloned().collect(),
            None => tuning::grid_expand(family),
        }
    }
}

pub fn load_corpus(path: &Path, format: Option<CorpusFormat>) -> Result<Corpus, PipelineError> {
    let format = format.unwrap_or_else(|| CorpusFormat::from_path(path));
    corpus::load_corpus(path, format).map_err(stage("load"))
}

pub fn preprocessor_for(corpus: &Corpus, projects_file: Option<&Path>) -> Result<Preprocessor, PipelineError> {
    let base = match projects_file {
        Some(p) => KnownProjects::load(p).map_err(stage("preprocess"))?,
        None => KnownProjects::default(),
    };
    Ok(Preprocessor::with_projects(base.extended(corpus.projects())))
}

fn cache_key(corpus: &Corpus, field: TextField, pre: &Preprocessor) -> String {
    let mut h = Sha256::new();
    h.update(crate::TOOL_VERSION.as_bytes());
    h.update(corpus.fingerprint().as_bytes());
    h.update(field.as_str().as_bytes());
    h.update(format!("{pre:?}").as_bytes());
    hex::encode(&h.finalize()[..16])
}

/// Preprocesses every report in corpus order. With a cache directory, the
/// documents are read from or written to `<dir>/docs-<key>.json`, keyed by
/// the corpus fingerprint, field and fixtures.
pub fn preprocess_corpus(
    corpus: &Corpus,
    field: TextField,
    pre: &Preprocessor,
    cache_dir: Option<&Path>,
    exec: Exec,
) -> Result<Vec<Document>, PipelineError> {
    let cache_file = cache_dir.map(|d| d.join(format!("docs-{}.json", cache_key(corpus, field, pre))));
    if let Some(path) = &cache_file {
        if let Ok(text) = std::fs::read_to_string(path) {
            match serde_json::from_str::<Vec<Document>>(&text) {
                Ok(docs) if docs.len() == corpus.len() => {
                    log::info!("preprocess: cache hit {}", path.display());
                    return Ok(docs);
                }
                _ => log::warn!("preprocess: ignoring unreadable cache {}", path.display()),
            }
        }
    }
    let docs: Result<Vec<Document>, _> = exec
        .map(corpus.reports(), |r| pre.preprocess(r, field))
        .into_iter()
        .collect();
    let docs = docs.map_err(stage("preprocess"))?;
    if let Some(path) = &cache_file {
        let write = std::fs::create_dir_all(path.parent().expect("cache file has a parent"))
            .and_then(|_| crate::io::write_atomic(path, &serde_json::to_vec(&docs).expect("documents serialize")));
        if let Err(e) = write {
            log::warn!("preprocess: could not write cache {}: {e}", path.display());
        }
    }
    Ok(docs)
}

/// The split depends only on the labels and the seed.
pub fn split_corpus(corpus: &Corpus, ratio: f64, seed: u64) -> Result<SplitPlan, PipelineError> {
    corpus::stratified_holdout(corpus.labels(), ratio, derive_seed(seed, "split")).map_err(stage("split"))
}

/// Feature matrix over all documents (corpus order) plus its description.
pub fn embed(
    docs: &[Document],
    labels: &[u8],
    split: &SplitPlan,
    source: &EmbeddingSource,
    scope: FitScope,
) -> Result<(FeatureMatrix, EmbeddingInfo), PipelineError> {
    let all: Vec<&Document> = docs.iter().collect();
    match source {
        EmbeddingSource::Tfidf => {
            let fit_docs: Vec<&Document> = match scope {
                FitScope::Full => all.clone(),
                FitScope::Train => split.train_indices.iter().map(|&i| &docs[i]).collect(),
            };
            let model = features::fit_tfidf(&fit_docs).map_err(stage("embed"))?;
            let matrix =
                features::assemble_matrix(FeatureSource::Tfidf(&model), &all, labels).map_err(stage("embed"))?;
            let info = EmbeddingInfo {
                kind: "tfidf".into(),
                fit_scope: Some(scope),
                n_features: matrix.n_cols(),
                n_fit_documents: Some(fit_docs.len()),
                model_name: None,
                manifest: None,
            };
            Ok((matrix, info))
        }
        EmbeddingSource::Dense { manifest } => {
            let table = features::import_dense(manifest).map_err(stage("embed"))?;
            let matrix =
                features::assemble_matrix(FeatureSource::Dense(&table), &all, labels).map_err(stage("embed"))?;
            let info = EmbeddingInfo {
                kind: "dense".into(),
                fit_scope: None,
                n_features: matrix.n_cols(),
                n_fit_documents: None,
                model_name: Some(table.model_name().to_string()),
                manifest: Some(manifest.display().to_string()),
            };
            Ok((matrix, info))
        }
    }
}

/// The training split, SMOTE-balanced.
pub fn balance_train(train: &FeatureMatrix, k: usize, seed: u64, exec: Exec) -> Result<FeatureMatrix, PipelineError> {
    let cfg = SmoteConfig {
        k_neighbors: k,
        seed: derive_seed(seed, "smote"),
    };
    smote(train, &cfg, exec).map_err(stage("smote"))
}

/// The knobs of grid search and refit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TuneSettings {
    pub folds: usize,
    pub seed: u64,
    pub select_metric: MetricName,
    pub smote_k: usize,
    pub smote_per_fold: bool,
    pub exec: Exec,
}

impl RunConfig {
    pub fn tune_settings(&self) -> TuneSettings {
        TuneSettings {
            folds: self.folds,
            seed: self.seed,
            select_metric: self.select_metric,
            smote_k: self.smote_k,
            smote_per_fold: self.smote_per_fold,
            exec: self.exec,
        }
    }
}

/// Grid search and refit for one family.
pub struct FamilyOutcome {
    pub grid: GridResult,
    pub model: TrainedModel,
    pub refit_seed: u64,
}

/// Cross-validates the family's grid on `cv_matrix` and refits the winner on
/// `refit_matrix`.
pub fn tune_family(
    family: Family,
    configs: &[ModelConfig],
    cv_matrix: &FeatureMatrix,
    refit_matrix: &FeatureMatrix,
    config: &TuneSettings,
) -> Result<FamilyOutcome, PipelineError> {
    let plan = tuning::stratified_kfold(cv_matrix.labels(), config.folds, derive_seed(config.seed, "cv"))
        .map_err(stage("tune"))?;
    let options = SearchOptions {
        selection: config.select_metric,
        per_fold_smote: config.smote_per_fold.then_some(SmoteConfig {
            k_neighbors: config.smote_k,
            seed: derive_seed(config.seed, "smote"),
        }),
        seed: derive_seed(config.seed, "cv-train"),
        exec: config.exec,
    };
    let grid = tuning::grid_search(cv_matrix, configs, &plan, &options).map_err(stage("tune"))?;
    let refit_seed = derive_indexed(config.seed, "refit", family as u64);
    let model =
        learners::train_with(grid.best_config(), refit_matrix, refit_seed, config.exec).map_err(stage("refit"))?;
    Ok(FamilyOutcome {
        grid,
        model,
        refit_seed,
    })
}

/// Scores, predictions and metrics on `test`.
pub fn evaluate_holdout(
    model: &TrainedModel,
    test: &FeatureMatrix,
    exec: Exec,
) -> Result<(MetricSet, Vec<PredictionRow>), PipelineError> {
    let (scores, pred) = learners::scores_and_labels(model, test, exec).map_err(stage("evaluate"))?;
    let metrics = MetricSet::evaluate(test.labels(), &pred, &scores).map_err(stage("evaluate"))?;
    let rows = (0..test.n_rows())
        .map(|i| PredictionRow {
            family: model.family(),
            bug_id: test.row_ids()[i].clone(),
            label: test.labels()[i],
            score: scores[i],
            prediction: pred[i],
        })
        .collect();
    Ok((metrics, rows))
}

/// Output of the embed stage: the full matrix in corpus order plus the split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddedData {
    /// The config the data was prepared under; later stages inherit it.
    pub config: RunConfig,
    pub corpus: CorpusInfo,
    pub split: SplitPlan,
    pub embedding: EmbeddingInfo,
    pub matrix: FeatureMatrix,
}

impl EmbeddedData {
    pub fn train(&self) -> FeatureMatrix {
        self.matrix.select(&self.split.train_indices)
    }

    pub fn test(&self) -> FeatureMatrix {
        self.matrix.select(&self.split.test_indices)
    }

    pub fn split_info(&self) -> SplitInfo {
        let train = self.train();
        let test = self.test();
        SplitInfo {
            seed: self.split.seed,
            ratio: self.split.ratio,
            stratified: true,
            n_train: train.n_rows(),
            n_test: test.n_rows(),
            train_class_counts: class_counts(train.labels()),
            test_class_counts: class_counts(test.labels()),
        }
    }
}

pub fn corpus_info(path: &Path, corpus: &Corpus) -> CorpusInfo {
    let (n_neg, n_pos) = corpus.class_counts();
    CorpusInfo {
        path: path.display().to_string(),
        fingerprint: corpus.fingerprint().to_string(),
        n_reports: corpus.len(),
        n_intrinsic: n_pos,
        n_non_intrinsic: n_neg,
    }
}

/// Output of the train stage for one family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedFamily {
    pub grid: GridResult,
    pub refit_seed: u64,
    pub model: ModelFile,
}

/// Output of the train stage: the config it ran under, the balancing
/// summary and one entry per family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingRecord {
    pub config: RunConfig,
    pub smote: SmoteInfo,
    pub families: Vec<TrainedFamily>,
}

impl TrainingRecord {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("record serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}

impl EmbeddedData {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string(self).expect("data serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}

/// Everything a run produces.
pub struct RunOutput {
    pub report: EvalReport,
    pub predictions: Vec<PredictionRow>,
    pub models: Vec<ModelFile>,
}

/// Whatever a run produced before failing.
#[derive(Debug, Default, Serialize)]
struct Partial {
    corpus: Option<CorpusInfo>,
    split: Option<SplitInfo>,
    embedding: Option<EmbeddingInfo>,
    smote: Option<SmoteInfo>,
    grids: Vec<GridResult>,
}

fn class_counts(labels: &[u8]) -> [usize; 2] {
    let pos = labels.iter().filter(|&&l| l == 1).count();
    [labels.len() - pos, pos]
}

/// Load, preprocess, split and embed.
pub fn prepare_data(config: &RunConfig) -> Result<EmbeddedData, PipelineError> {
    prepare(config, &mut Partial::default())
}

fn prepare(config: &RunConfig, partial: &mut Partial) -> Result<EmbeddedData, PipelineError> {
    let corpus = load_corpus(&config.corpus, config.format)?;
    let info = corpus_info(&config.corpus, &corpus);
    partial.corpus = Some(info.clone());
    log::info!(
        "load: {} reports ({} intrinsic, {} non-intrinsic)",
        info.n_reports,
        info.n_intrinsic,
        info.n_non_intrinsic
    );
    let pre = preprocessor_for(&corpus, config.projects_file.as_deref())?;
    let docs = preprocess_corpus(
        &corpus,
        config.text_field,
        &pre,
        config.cache_dir.as_deref(),
        config.exec,
    )?;
    let split = split_corpus(&corpus, config.holdout_ratio, config.seed)?;
    let (matrix, embedding) = embed(&docs, &corpus.label_bits(), &split, &config.embedding, config.fit_scope)?;
    log::info!("embed: {} features", matrix.n_cols());
    Ok(EmbeddedData {
        config: config.clone(),
        corpus: info,
        split,
        embedding,
        matrix,
    })
}

fn train_families(
    config: &RunConfig,
    data: &EmbeddedData,
    partial: &mut Partial,
) -> Result<TrainingRecord, PipelineError> {
    let train = data.train();
    let balanced = balance_train(&train, config.smote_k, config.seed, config.exec)?;
    let smote_info = SmoteInfo {
        placement: config.smote_placement(),
        k_neighbors: config.smote_k,
        seed: derive_seed(config.seed, "smote"),
        synthetic_rows: balanced.n_rows() - train.n_rows(),
        balanced_class_counts: class_counts(balanced.labels()),
    };
    partial.smote = Some(smote_info.clone());
    let cv_matrix = match config.smote_placement() {
        SmotePlacement::BeforeCv => &balanced,
        SmotePlacement::PerFold => &train,
    };
    let mut families = Vec::new();
    for &family in &config.families {
        let configs = config.grid_for(family);
        if configs.is_empty() {
            log::warn!("{family}: empty grid, skipped");
            continue;
        }
        log::info!("{family}: searching {} configs", configs.len());
        let outcome = tune_family(family, &configs, cv_matrix, &balanced, &config.tune_settings())?;
        partial.grids.push(outcome.grid.clone());
        families.push(TrainedFamily {
            grid: outcome.grid,
            refit_seed: outcome.refit_seed,
            model: ModelFile::new(outcome.model),
        });
    }
    Ok(TrainingRecord {
        config: config.clone(),
        smote: smote_info,
        families,
    })
}

/// SMOTE, grid search and refit for every selected family.
pub fn train_stage(config: &RunConfig, data: &EmbeddedData) -> Result<TrainingRecord, PipelineError> {
    config.validate()?;
    train_families(config, data, &mut Partial::default())
}

/// Holdout evaluation of every trained family, assembled into a report
/// without timing.
pub fn evaluate_stage(data: &EmbeddedData, record: &TrainingRecord) -> Result<RunOutput, PipelineError> {
    let test = data.test();
    let mut predictions = Vec::new();
    let mut families = Vec::new();
    let mut models = Vec::new();
    for f in &record.families {
        let (holdout, rows) = evaluate_holdout(&f.model.model, &test, record.config.exec)?;
        log::info!("{}: holdout F1 {:.4}", f.grid.family, holdout.f1);
        predictions.extend(rows);
        families.push(FamilyReport::new(f.grid.clone(), holdout, f.refit_seed));
        models.push(f.model.clone());
    }
    let report = EvalReport {
        schema_version: SCHEMA_VERSION,
        tool_version: crate::TOOL_VERSION.to_string(),
        config: record.config.clone(),
        corpus: data.corpus.clone(),
        split: data.split_info(),
        embedding: data.embedding.clone(),
        smote: record.smote.clone(),
        refit: REFIT_POLICY.to_string(),
        families,
        timing: None,
    };
    Ok(RunOutput {
        report,
        predictions,
        models,
    })
}

fn run_stages(config: &RunConfig, partial: &mut Partial) -> Result<RunOutput, PipelineError> {
    let started = Instant::now();
    let started_at = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map_or(0, |d| d.as_secs());
    config.validate()?;
    let data = prepare(config, partial)?;
    partial.split = Some(data.split_info());
    partial.embedding = Some(data.embedding.clone());
    let record = train_families(config, &data, partial)?;
    let mut output = evaluate_stage(&data, &record)?;
    output.report.timing = Some(Timing {
        started_at_unix: started_at,
        wall_clock_secs: started.elapsed().as_secs_f64(),
    });
    Ok(output)
}

/// Runs every stage in memory.
pub fn run_experiment(config: &RunConfig) -> Result<RunOutput, PipelineError> {
    run_stages(config, &mut Partial::default())
}

pub const REPORT_JSON: &str = "report.json";
pub const REPORT_MD: &str = "report.md";
pub const PREDICTIONS_CSV: &str = "predictions.csv";
pub const MODELS_DIR: &str = "models";
pub const QUARANTINE_DIR: &str = "quarantine";

fn io_err(stage_name: &'static str) -> impl FnOnce(std::io::Error) -> PipelineError {
    stage(stage_name)
}

/// Writes report.json, report.md, predictions.csv and one model file per
/// family under `out`, each atomically.
pub fn write_outputs(out: &Path, output: &RunOutput) -> Result<(), PipelineError> {
    std::fs::create_dir_all(out.join(MODELS_DIR)).map_err(io_err("write"))?;
    crate::io::write_atomic(&out.join(REPORT_JSON), output.report.to_json().as_bytes()).map_err(io_err("write"))?;
    crate::io::write_atomic(&out.join(REPORT_MD), render_markdown(&output.report).as_bytes())
        .map_err(io_err("write"))?;
    let csv = report::predictions_csv(&output.predictions).map_err(stage("write"))?;
    crate::io::write_atomic(&out.join(PREDICTIONS_CSV), &csv).map_err(io_err("write"))?;
    for m in &output.models {
        let path = out.join(MODELS_DIR).join(format!("{}.json", m.model.family()));
        crate::io::write_atomic(&path, m.to_json().as_bytes()).map_err(io_err("write"))?;
    }
    Ok(())
}

/// Runs the experiment and persists its outputs under `config.out`. On
/// failure, whatever was computed is written to `<out>/quarantine/` together
/// with the error, and the error is returned.
pub fn run_to_dir(config: &RunConfig) -> Result<RunOutput, PipelineError> {
    let mut partial = Partial::default();
    match run_stages(config, &mut partial).and_then(|o| write_outputs(&config.out, &o).map(|_| o)) {
        Ok(o) => Ok(o),
        Err(e) => {
            let dir = config.out.join(QUARANTINE_DIR);
            let body = serde_json::json!({ "error": e.to_string(), "partial": partial });
            let written = std::fs::create_dir_all(&dir).and_then(|_| {
                crate::io::write_atomic(
                    &dir.join("partial.json"),
                    serde_json::to_string_pretty(&body)
                        .expect("partial serializes")
                        .as_bytes(),
                )
            });
            if let Err(w) = written {
                log::error!("could not write quarantine output: {w}");
            }
            Err(e)
        }
    }
}
