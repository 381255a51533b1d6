//! Classification of software bug reports into intrinsic and non-intrinsic
//! bugs from their title or description text.
//!
//! The pipeline runs: corpus loading and labeling, text cleanup and
//! lemmatization, TF-IDF (or imported dense) embeddings, SMOTE balancing,
//! five classifier families tuned by grid search under stratified k-fold
//! cross-validation, and holdout evaluation.

pub mod balance;
pub mod corpus;
pub mod exec;
pub mod features;
pub mod io;
pub mod learners;
pub mod metrics;
pub mod pipeline;
pub mod seed;
pub mod synth;
pub mod textprep;
pub mod tuning;

pub use corpus::{BugReport, Corpus, Label, SplitPlan};
pub use exec::Exec;
pub use features::{FeatureMatrix, TfidfModel};
pub use learners::{ModelConfig, TrainedModel};

/// Version string recorded in reports and model files.
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");
