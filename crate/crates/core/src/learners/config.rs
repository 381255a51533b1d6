use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::LearnError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Svm,
    Logreg,
    Dtree,
    Rforest,
    Knn,
}

impl Family {
    pub const ALL: [Family; 5] = [Family::Svm, Family::Logreg, Family::Dtree, Family::Rforest, Family::Knn];

    pub fn as_str(self) -> &'static str {
        match self {
            Family::Svm => "svm",
            Family::Logreg => "logreg",
            Family::Dtree => "dtree",
            Family::Rforest => "rforest",
            Family::Knn => "knn",
        }
    }

    /// Display name used in report tables.
    pub fn display_name(self) -> &'static str {
        match self {
            Family::Svm => "SVM",
            Family::Logreg => "LR",
            Family::Dtree => "DT",
            Family::Rforest => "RF",
            Family::Knn => "KNN",
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Family {
    type Err = LearnError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "svm" => Ok(Family::Svm),
            "lr" | "logreg" => Ok(Family::Logreg),
            "dt" | "dtree" => Ok(Family::Dtree),
            "rf" | "rforest" => Ok(Family::Rforest),
            "knn" => Ok(Family::Knn),
            other => Err(LearnError::InvalidConfig(format!("unknown family {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Kernel {
    Linear,
    Poly,
    Rbf,
    Sigmoid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GammaMode {
    Auto,
    Scale,
}

/// Per-class loss weights. The fixed modes are named by the Intrinsic
/// weight first: `0.6/0.4` weighs Intrinsic 0.6 and NonIntrinsic 0.4.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ClassWeightMode {
    #[serde(rename = "balanced")]
    Balanced,
    #[serde(rename = "0.6/0.4")]
    Intrinsic60,
    #[serde(rename = "0.4/0.6")]
    Intrinsic40,
}

impl ClassWeightMode {
    pub const ALL: [ClassWeightMode; 3] = [
        ClassWeightMode::Balanced,
        ClassWeightMode::Intrinsic60,
        ClassWeightMode::Intrinsic40,
    ];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Penalty {
    L1,
    L2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Solver {
    CoordinateDescent,
    Lbfgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Criterion {
    Gini,
    Entropy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MaxFeatures {
    /// ceil(sqrt(d)) candidate features per split.
    Sqrt,
    All,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DistanceMetric {
    Euclidean,
    Manhattan,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KnnWeights {
    Uniform,
    Distance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SvmConfig {
    pub kernel: Kernel,
    pub gamma: GammaMode,
    pub class_weight: ClassWeightMode,
    #[serde(default = "one")]
    pub c: f64,
    #[serde(default = "three")]
    pub degree: u32,
    #[serde(default)]
    pub coef0: f64,
}

fn one() -> f64 {
    1.0
}

fn three() -> u32 {
    3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LogregConfig {
    pub c: f64,
    pub class_weight: ClassWeightMode,
    pub penalty: Penalty,
    pub solver: Solver,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TreeConfig {
    pub criterion: Criterion,
    pub max_depth: usize,
    pub min_samples_leaf: usize,
    pub min_samples_split: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ForestConfig {
    pub criterion: Criterion,
    pub max_depth: usize,
    pub min_samples_leaf: usize,
    pub min_samples_split: usize,
    #[serde(default = "hundred")]
    pub n_estimators: usize,
    #[serde(default = "yes")]
    pub bootstrap: bool,
    #[serde(default = "sqrt")]
    pub max_features: MaxFeatures,
}

fn hundred() -> usize {
    100
}

fn yes() -> bool {
    true
}

fn sqrt() -> MaxFeatures {
    MaxFeatures::Sqrt
}

impl ForestConfig {
    pub fn tree(&self) -> TreeConfig {
        TreeConfig {
            criterion: self.criterion,
            max_depth: self.max_depth,
            min_samples_leaf: self.min_samples_leaf,
            min_samples_split: self.min_samples_split,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KnnConfig {
    pub metric: DistanceMetric,
    pub n_neighbors: usize,
    pub weights: KnnWeights,
}

/// One hyperparameter assignment. Each family carries only its own fields;
/// unknown fields are rejected on deserialization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase")]
pub enum ModelConfig {
    Svm(SvmConfig),
    Logreg(LogregConfig),
    Dtree(TreeConfig),
    Rforest(ForestConfig),
    Knn(KnnConfig),
}

fn invalid(msg: impl Into<String>) -> Result<(), LearnError> {
    Err(LearnError::InvalidConfig(msg.into()))
}

fn validate_tree(max_depth: usize, leaf: usize, split: usize) -> Result<(), LearnError> {
    if max_depth == 0 {
        return invalid("max_depth must be at least 1");
    }
    if leaf == 0 {
        return invalid("min_samples_leaf must be at least 1");
    }
    if split < 2 {
        return invalid(format!("min_samples_split must be at least 2, got {split}"));
    }
    Ok(())
}

impl ModelConfig {
    pub fn family(&self) -> Family {
        match self {
            ModelConfig::Svm(_) => Family::Svm,
            ModelConfig::Logreg(_) => Family::Logreg,
            ModelConfig::Dtree(_) => Family::Dtree,
            ModelConfig::Rforest(_) => Family::Rforest,
            ModelConfig::Knn(_) => Family::Knn,
        }
    }

    pub fn validate(&self) -> Result<(), LearnError> {
        match self {
            ModelConfig::Svm(c) => {
                if !(c.c > 0.0 && c.c.is_finite()) {
                    return invalid("C must be positive");
                }
                if c.kernel == Kernel::Poly && c.degree == 0 {
                    return invalid("poly degree must be at least 1");
                }
                Ok(())
            }
            ModelConfig::Logreg(c) => {
                if !(c.c > 0.0 && c.c.is_finite()) {
                    return invalid("C must be positive");
                }
                if c.penalty == Penalty::L1 && c.solver != Solver::CoordinateDescent {
                    return invalid("penalty l1 requires the coordinate_descent solver");
                }
                Ok(())
            }
            ModelConfig::Dtree(c) => validate_tree(c.max_depth, c.min_samples_leaf, c.min_samples_split),
            ModelConfig::Rforest(c) => {
                if c.n_estimators == 0 {
                    return invalid("n_estimators must be at least 1");
                }
                validate_tree(c.max_depth, c.min_samples_leaf, c.min_samples_split)
            }
            ModelConfig::Knn(c) => {
                if c.n_neighbors == 0 {
                    return invalid("n_neighbors must be at least 1");
                }
                Ok(())
            }
        }
    }

    /// Compact `key=value` rendering for tables and logs.
    pub fn summary(&self) -> String {
        let v = serde_json::to_value(self).expect("config serializes");
        let obj = v.as_object().expect("config is an object");
        obj.iter()
            .filter(|(k, _)| k.as_str() != "family")
            .map(|(k, v)| match v {
                serde_json::Value::String(s) => format!("{k}={s}"),
                other => format!("{k}={other}"),
            })
            .collect::<Vec<_>>()
            .join(", ")
    }
}
