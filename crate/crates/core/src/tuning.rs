//! Stratified k-fold cross-validation and exhaustive grid search.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use rand::seq::SliceRandom;

use crate::balance::{smote, BalanceError, SmoteConfig};
use crate::exec::Exec;
use crate::features::FeatureMatrix;
use crate::learners::{
    self, ClassWeightMode, Criterion, DistanceMetric, Family, ForestConfig, GammaMode, Kernel, KnnConfig, KnnWeights,
    LogregConfig, MaxFeatures, ModelConfig, Penalty, Solver, SvmConfig, TreeConfig,
};
use crate::metrics::{MetricError, MetricName, MetricSet};
use crate::seed;

#[derive(Debug, Error)]
pub enum TuningError {
    #[error("k must be at least 2, got {0}")]
    BadK(usize),
    #[error("class {0} is absent; cannot stratify")]
    ClassAbsent(u8),
    #[error("{n} samples cannot fill {k} folds")]
    TooFewSamples { n: usize, k: usize },
    #[error("fold plan covers {plan} rows but the matrix has {rows}")]
    PlanMismatch { plan: usize, rows: usize },
    #[error("empty grid")]
    EmptyGrid,
    #[error("grid mixes families {0} and {1}")]
    MixedGrid(Family, Family),
    #[error("all {0} configurations failed for {1}")]
    AllFailed(usize, Family),
}

/// Assignment of every sample to one of `k` validation folds.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub k: usize,
    pub seed: u64,
    pub fold_of: Vec<usize>,
}

impl FoldPlan {
    pub fn len(&self) -> usize {
        self.fold_of.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fold_of.is_empty()
    }

    /// (training indices, validation indices) for fold `f`, both ascending.
    pub fn split(&self, f: usize) -> (Vec<usize>, Vec<usize>) {
        (0..self.fold_of.len()).partition(|&i| self.fold_of[i] != f)
    }

    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &f in &self.fold_of {
            sizes[f] += 1;
        }
        sizes
    }
}

/// Shuffles each class with a seeded stream (NonIntrinsic first), then deals
/// samples to folds round-robin, continuing the rotation across classes so
/// overall fold sizes also differ by at most one. A class with fewer than
/// `k` members leaves some folds without it (logged).
pub fn stratified_kfold(labels: &[u8], k: usize, seed: u64) -> Result<FoldPlan, TuningError> {
    if k < 2 {
        return Err(TuningError::BadK(k));
    }
    if labels.len() < k {
        return Err(TuningError::TooFewSamples { n: labels.len(), k });
    }
    let mut rng = seed::rng(seed::derive_seed(seed, "kfold"));
    let mut fold_of = vec![0; labels.len()];
    let mut next = 0;
    for class in [0u8, 1] {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        if members.is_empty() {
            return Err(TuningError::ClassAbsent(class));
        }
        if members.len() < k {
            log::warn!("class {class} has {} samples, fewer than k = {k}", members.len());
        }
        members.shuffle(&mut rng);
        for i in members {
            fold_of[i] = next % k;
            next += 1;
        }
    }
    Ok(FoldPlan { k, seed, fold_of })
}

/// The search grid of one family, in enumeration order (outermost field
/// first, as listed per family below). Invalid combinations are dropped.
///
/// - svm: kernel, class_weight, gamma
/// - logreg: C, class_weight, penalty, solver (l1 with lbfgs dropped)
/// - dtree: criterion, max_depth, min_samples_leaf, min_samples_split
/// - rforest: max_depth, min_samples_leaf, min_samples_split (gini, 100 trees)
/// - knn: metric, n_neighbors, weights
pub fn grid_expand(family: Family) -> Vec<ModelConfig> {
    let mut out = Vec::new();
    let range = [1usize, 2, 3];
    let splits = range.iter().copied().filter(|&s| s >= 2);
    match family {
        Family::Svm => {
            for kernel in [Kernel::Linear, Kernel::Poly, Kernel::Rbf, Kernel::Sigmoid] {
                for class_weight in ClassWeightMode::ALL {
                    for gamma in [GammaMode::Auto, GammaMode::Scale] {
                        out.push(ModelConfig::Svm(SvmConfig {
                            kernel,
                            gamma,
                            class_weight,
                            c: 1.0,
                            degree: 3,
                            coef0: 0.0,
                        }));
                    }
                }
            }
        }
        Family::Logreg => {
            for c in [1.0, 0.1] {
                for class_weight in ClassWeightMode::ALL {
                    for penalty in [Penalty::L1, Penalty::L2] {
                        for solver in [Solver::CoordinateDescent, Solver::Lbfgs] {
                            if penalty == Penalty::L1 && solver == Solver::Lbfgs {
                                log::debug!("grid: skipping invalid logreg combination l1 + lbfgs");
                                continue;
                            }
                            out.push(ModelConfig::Logreg(LogregConfig {
                                c,
                                class_weight,
                                penalty,
                                solver,
                            }));
                        }
                    }
                }
            }
        }
        Family::Dtree => {
            for criterion in [Criterion::Gini, Criterion::Entropy] {
                for max_depth in range {
                    for min_samples_leaf in range {
                        for min_samples_split in splits.clone() {
                            out.push(ModelConfig::Dtree(TreeConfig {
                                criterion,
                                max_depth,
                                min_samples_leaf,
                                min_samples_split,
                            }));
                        }
                    }
                }
            }
        }
        Family::Rforest => {
            for max_depth in range {
                for min_samples_leaf in range {
                    for min_samples_split in splits.clone() {
                        out.push(ModelConfig::Rforest(ForestConfig {
                            criterion: Criterion::Gini,
                            max_depth,
                            min_samples_leaf,
                            min_samples_split,
                            n_estimators: 100,
                            bootstrap: true,
                            max_features: MaxFeatures::Sqrt,
                        }));
                    }
                }
            }
        }
        Family::Knn => {
            for metric in [DistanceMetric::Euclidean, DistanceMetric::Manhattan] {
                for n_neighbors in range {
                    for weights in [KnnWeights::Uniform, KnnWeights::Distance] {
                        out.push(ModelConfig::Knn(KnnConfig {
                            metric,
                            n_neighbors,
                            weights,
                        }));
                    }
                }
            }
        }
    }
    out
}

/// One value per metric.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricValues {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub accuracy: f64,
    pub auc: f64,
}

impl MetricValues {
    pub fn get(&self, name: MetricName) -> f64 {
        match name {
            MetricName::Precision => self.precision,
            MetricName::Recall => self.recall,
            MetricName::F1 => self.f1,
            MetricName::Accuracy => self.accuracy,
            MetricName::Auc => self.auc,
        }
    }

    fn from_fn(f: impl Fn(MetricName) -> f64) -> Self {
        MetricValues {
            precision: f(MetricName::Precision),
            recall: f(MetricName::Recall),
            f1: f(MetricName::F1),
            accuracy: f(MetricName::Accuracy),
            auc: f(MetricName::Auc),
        }
    }
}

/// Arithmetic mean and population standard deviation over folds.
pub fn summarize(folds: &[MetricSet]) -> (MetricValues, MetricValues) {
    let n = folds.len() as f64;
    let mean = MetricValues::from_fn(|m| folds.iter().map(|s| s.get(m)).sum::<f64>() / n);
    let std = MetricValues::from_fn(|m| {
        let mu = mean.get(m);
        (folds.iter().map(|s| (s.get(m) - mu).powi(2)).sum::<f64>() / n).sqrt()
    });
    (mean, std)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "lowercase")]
pub enum Outcome {
    Ok {
        folds: Vec<MetricSet>,
        mean: MetricValues,
        std: MetricValues,
    },
    Failed {
        fold: usize,
        error: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridEntry {
    pub config: ModelConfig,
    #[serde(flatten)]
    pub outcome: Outcome,
}

impl GridEntry {
    pub fn mean(&self) -> Option<&MetricValues> {
        match &self.outcome {
            Outcome::Ok { mean, .. } => Some(mean),
            Outcome::Failed { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridResult {
    pub family: Family,
    pub selection_metric: MetricName,
    pub entries: Vec<GridEntry>,
    pub best_index: usize,
}

impl GridResult {
    pub fn best(&self) -> &GridEntry {
        &self.entries[self.best_index]
    }

    pub fn best_config(&self) -> &ModelConfig {
        &self.best().config
    }

    pub fn failed(&self) -> impl Iterator<Item = &GridEntry> {
        self.entries.iter().filter(|e| e.mean().is_none())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SearchOptions {
    pub selection: MetricName,
    /// SMOTE applied to each training fold (validation folds stay untouched).
    pub per_fold_smote: Option<SmoteConfig>,
    pub seed: u64,
    pub exec: Exec,
}

impl Default for SearchOptions {
    fn default() -> Self {
        SearchOptions {
            selection: MetricName::F1,
            per_fold_smote: None,
            seed: 0,
            exec: Exec::Parallel,
        }
    }
}

#[derive(Debug, Error)]
enum FoldError {
    #[error(transparent)]
    Learn(#[from] learners::LearnError),
    #[error(transparent)]
    Balance(#[from] BalanceError),
    #[error(transparent)]
    Metric(#[from] MetricError),
}

fn evaluate_fold(
    config: &ModelConfig,
    matrix: &FeatureMatrix,
    plan: &FoldPlan,
    fold: usize,
    options: &SearchOptions,
) -> Result<MetricSet, FoldError> {
    let (train_idx, val_idx) = plan.split(fold);
    let mut train = matrix.select(&train_idx);
    if let Some(cfg) = options.per_fold_smote {
        let cfg = SmoteConfig {
            seed: seed::derive_indexed(cfg.seed, "smote-fold", fold as u64),
            ..cfg
        };
        train = smote(&train, &cfg, Exec::Sequential)?;
    }
    let val = matrix.select(&val_idx);
    let model_seed = seed::derive_indexed(options.seed, "cv-model", fold as u64);
    let model = learners::train(config, &train, model_seed)?;
    let (scores, pred) = learners::scores_and_labels(&model, &val, Exec::Sequential)?;
    Ok(MetricSet::evaluate(val.labels(), &pred, &scores)?)
}

fn evaluate_config(
    config: &ModelConfig,
    matrix: &FeatureMatrix,
    plan: &FoldPlan,
    options: &SearchOptions,
) -> GridEntry {
    let mut folds = Vec::with_capacity(plan.k);
    for f in 0..plan.k {
        match evaluate_fold(config, matrix, plan, f, options) {
            Ok(m) => folds.push(m),
            Err(e) => {
                log::warn!("{} [{}] failed on fold {f}: {e}", config.family(), config.summary());
                return GridEntry {
                    config: config.clone(),
                    outcome: Outcome::Failed {
                        fold: f,
                        error: e.to_string(),
                    },
                };
            }
        }
    }
    let (mean, std) = summarize(&folds);
    GridEntry {
        config: config.clone(),
        outcome: Outcome::Ok { folds, mean, std },
    }
}

/// Cross-validates every config and selects the one with the highest mean
/// selection metric; ties go to the earlier config. Failed configs are kept
/// in the result but never selected.
pub fn grid_search(
    matrix: &FeatureMatrix,
    configs: &[ModelConfig],
    plan: &FoldPlan,
    options: &SearchOptions,
) -> Result<GridResult, TuningError> {
    let first = configs.first().ok_or(TuningError::EmptyGrid)?;
    let family = first.family();
    if let Some(other) = configs.iter().find(|c| c.family() != family) {
        return Err(TuningError::MixedGrid(family, other.family()));
    }
    if plan.len() != matrix.n_rows() {
        return Err(TuningError::PlanMismatch {
            plan: plan.len(),
            rows: matrix.n_rows(),
        });
    }
    let entries = options.exec.map(configs, |c| evaluate_config(c, matrix, plan, options));
    let mut best: Option<(usize, f64)> = None;
    for (i, e) in entries.iter().enumerate() {
        if let Some(mean) = e.mean() {
            let v = mean.get(options.selection);
            if best.is_none_or(|(_, b)| v > b) {
                best = Some((i, v));
            }
        }
    }
    let (best_index, _) = best.ok_or(TuningError::AllFailed(entries.len(), family))?;
    Ok(GridResult {
        family,
        selection_metric: options.selection,
        entries,
        best_index,
    })
}
