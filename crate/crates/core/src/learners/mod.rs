//! The five classifier families (SVM, logistic regression, decision tree,
//! random forest, k-nearest neighbors) behind one train/predict/score
//! surface.

mod config;
pub mod forest;
pub mod kernel;
pub mod knn;
pub mod logreg;
pub mod svm;
pub mod tree;

pub use config::{
    ClassWeightMode, Criterion, DistanceMetric, Family, ForestConfig, GammaMode, Kernel, KnnConfig, KnnWeights,
    LogregConfig, MaxFeatures, ModelConfig, Penalty, Solver, SvmConfig, TreeConfig,
};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exec::Exec;
use crate::features::FeatureMatrix;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LearnError {
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("training needs at least 2 samples of each class (got {neg} non-intrinsic, {pos} intrinsic)")]
    Degenerate { neg: usize, pos: usize },
    #[error("{solver} did not converge within {iterations} iterations (residual {residual:e})")]
    Convergence {
        solver: &'static str,
        iterations: usize,
        residual: f64,
    },
    #[error("feature dimension mismatch: model has {expected}, input has {got}")]
    Dimension { expected: usize, got: usize },
    #[error("class weights need both classes present")]
    Weights,
    #[error("unsupported model file version {0}")]
    Version(u32),
    #[error("model file: {0}")]
    Format(String),
}

/// (NonIntrinsic, Intrinsic) weights. `balanced` gives n / (2 n_c).
pub fn class_weights(mode: ClassWeightMode, labels: &[u8]) -> Result<(f64, f64), LearnError> {
    let pos = labels.iter().filter(|&&l| l == 1).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(LearnError::Weights);
    }
    Ok(match mode {
        ClassWeightMode::Balanced => {
            let n = labels.len() as f64;
            (n / (2.0 * neg as f64), n / (2.0 * pos as f64))
        }
        ClassWeightMode::Intrinsic60 => (0.4, 0.6),
        ClassWeightMode::Intrinsic40 => (0.6, 0.4),
    })
}

/// `auto` is 1/d; `scale` is 1/(d Var) over every matrix entry (implicit
/// zeros included), falling back to 1/d for a constant matrix.
pub fn resolve_gamma(mode: GammaMode, matrix: &FeatureMatrix) -> f64 {
    let d = matrix.n_cols().max(1) as f64;
    let auto = 1.0 / d;
    if mode == GammaMode::Auto {
        return auto;
    }
    let total = matrix.n_rows() as f64 * d;
    if total == 0.0 {
        return auto;
    }
    let (mut sum, mut explicit, mut lo, mut hi) = (0.0, 0usize, f64::INFINITY, f64::NEG_INFINITY);
    for r in 0..matrix.n_rows() {
        for (_, v) in matrix.row(r).entries() {
            sum += v;
            explicit += 1;
            lo = lo.min(v);
            hi = hi.max(v);
        }
    }
    if (explicit as f64) < total {
        lo = lo.min(0.0);
        hi = hi.max(0.0);
    }
    if lo == hi {
        return auto;
    }
    let mean = sum / total;
    let mut ss = (total - explicit as f64) * mean * mean;
    for r in 0..matrix.n_rows() {
        for (_, v) in matrix.row(r).entries() {
            ss += (v - mean) * (v - mean);
        }
    }
    let var = ss / total;
    if var > 0.0 {
        1.0 / (d * var)
    } else {
        auto
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase")]
pub enum TrainedModel {
    Svm(svm::SvmModel),
    Logreg(logreg::LogregModel),
    Dtree(tree::TreeModel),
    Rforest(forest::ForestModel),
    Knn(knn::KnnModel),
}

impl TrainedModel {
    pub fn family(&self) -> Family {
        match self {
            TrainedModel::Svm(_) => Family::Svm,
            TrainedModel::Logreg(_) => Family::Logreg,
            TrainedModel::Dtree(_) => Family::Dtree,
            TrainedModel::Rforest(_) => Family::Rforest,
            TrainedModel::Knn(_) => Family::Knn,
        }
    }

    pub fn config(&self) -> ModelConfig {
        match self {
            TrainedModel::Svm(m) => ModelConfig::Svm(m.config.clone()),
            TrainedModel::Logreg(m) => ModelConfig::Logreg(m.config.clone()),
            TrainedModel::Dtree(m) => ModelConfig::Dtree(m.config.clone()),
            TrainedModel::Rforest(m) => ModelConfig::Rforest(m.config.clone()),
            TrainedModel::Knn(m) => ModelConfig::Knn(m.config.clone()),
        }
    }

    pub fn n_features(&self) -> usize {
        match self {
            TrainedModel::Svm(m) => m.n_features,
            TrainedModel::Logreg(m) => m.weights.len(),
            TrainedModel::Dtree(m) => m.n_features,
            TrainedModel::Rforest(m) => m.n_features,
            TrainedModel::Knn(m) => m.train.n_cols(),
        }
    }

    /// Margin-type scores are thresholded at 0, probability-like at 0.5.
    pub fn margin_scores(&self) -> bool {
        matches!(self, TrainedModel::Svm(_))
    }
}

fn check_trainable(matrix: &FeatureMatrix) -> Result<(), LearnError> {
    let (neg, pos) = matrix.class_counts();
    if neg < 2 || pos < 2 {
        return Err(LearnError::Degenerate { neg, pos });
    }
    Ok(())
}

pub fn train(config: &ModelConfig, matrix: &FeatureMatrix, seed: u64) -> Result<TrainedModel, LearnError> {
    train_with(config, matrix, seed, Exec::Sequential)
}

/// `exec` only affects forests (trees are grown independently).
pub fn train_with(
    config: &ModelConfig,
    matrix: &FeatureMatrix,
    seed: u64,
    exec: Exec,
) -> Result<TrainedModel, LearnError> {
    config.validate()?;
    check_trainable(matrix)?;
    Ok(match config {
        ModelConfig::Svm(c) => TrainedModel::Svm(svm::fit(c, matrix)?),
        ModelConfig::Logreg(c) => TrainedModel::Logreg(logreg::fit(c, matrix)?),
        ModelConfig::Dtree(c) => TrainedModel::Dtree(tree::fit(c, matrix)),
        ModelConfig::Rforest(c) => TrainedModel::Rforest(forest::fit(c, matrix, seed, exec)),
        ModelConfig::Knn(c) => TrainedModel::Knn(knn::fit(c, matrix)),
    })
}

fn check_dims(model: &TrainedModel, matrix: &FeatureMatrix) -> Result<(), LearnError> {
    if model.n_features() != matrix.n_cols() {
        return Err(LearnError::Dimension {
            expected: model.n_features(),
            got: matrix.n_cols(),
        });
    }
    Ok(())
}

pub fn decision_scores(model: &TrainedModel, matrix: &FeatureMatrix) -> Result<Vec<f64>, LearnError> {
    decision_scores_with(model, matrix, Exec::Sequential)
}

pub fn decision_scores_with(model: &TrainedModel, matrix: &FeatureMatrix, exec: Exec) -> Result<Vec<f64>, LearnError> {
    check_dims(model, matrix)?;
    Ok(exec.map_range(matrix.n_rows(), |r| {
        let x = matrix.row(r);
        match model {
            TrainedModel::Svm(m) => m.decision(&x),
            TrainedModel::Logreg(m) => m.probability(&x),
            TrainedModel::Dtree(m) => m.score(&x),
            TrainedModel::Rforest(m) => m.score(&x),
            TrainedModel::Knn(m) => m.query(&x).score,
        }
    }))
}

pub fn predict(model: &TrainedModel, matrix: &FeatureMatrix) -> Result<Vec<u8>, LearnError> {
    predict_with(model, matrix, Exec::Sequential)
}

pub fn predict_with(model: &TrainedModel, matrix: &FeatureMatrix, exec: Exec) -> Result<Vec<u8>, LearnError> {
    Ok(scores_and_labels(model, matrix, exec)?.1)
}

/// Scores and the labels derived from them in one pass.
pub fn scores_and_labels(
    model: &TrainedModel,
    matrix: &FeatureMatrix,
    exec: Exec,
) -> Result<(Vec<f64>, Vec<u8>), LearnError> {
    check_dims(model, matrix)?;
    if let TrainedModel::Knn(m) = model {
        let q = exec.map_range(matrix.n_rows(), |r| m.query(&matrix.row(r)));
        return Ok(q.iter().map(|q| (q.score, q.label())).unzip());
    }
    let scores = decision_scores_with(model, matrix, exec)?;
    let labels = scores.iter().map(|&s| label_from_score(model, s)).collect();
    Ok((scores, labels))
}

pub fn label_from_score(model: &TrainedModel, score: f64) -> u8 {
    if model.margin_scores() {
        u8::from(score > 0.0)
    } else {
        u8::from(score >= 0.5)
    }
}

pub const MODEL_FILE_VERSION: u32 = 1;

/// Versioned JSON envelope for a trained model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub format_version: u32,
    pub tool_version: String,
    pub model: TrainedModel,
}

impl ModelFile {
    pub fn new(model: TrainedModel) -> Self {
        ModelFile {
            format_version: MODEL_FILE_VERSION,
            tool_version: crate::TOOL_VERSION.to_string(),
            model,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, LearnError> {
        let file: ModelFile = serde_json::from_str(text).map_err(|e| LearnError::Format(e.to_string()))?;
        if file.format_version != MODEL_FILE_VERSION {
            return Err(LearnError::Version(file.format_version));
        }
        Ok(file)
    }
}
