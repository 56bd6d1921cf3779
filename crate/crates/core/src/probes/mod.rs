//! Predictive probes: does the task type carry signal about who wins and how
//! hard a prompt is?
//!
//! Task A classifies the comparison outcome with multinomial logistic
//! regression; Task B regresses the difficulty score. Both use stratified
//! folds, a small regularization sweep, and an ablation that drops the cluster
//! one-hot block.

pub mod features;
pub mod folds;
pub mod logreg;
pub mod report;
pub mod ridge;
pub mod runner;
pub mod synthetic;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use features::{build_features_a, build_features_b, task_a_class, LayoutA, LayoutB, ModelIndex};
pub use folds::stratified_folds;
pub use logreg::{fit_multinomial_logreg, predict_logreg, LogRegConfig, LogRegModel, Penalty};
pub use report::{render_csv, render_table, FamilyResult, ProbeReport, ProbeTask};
pub use ridge::{fit_lasso, fit_ridge, LinearModel};
pub use runner::{assign_clusters, run_probe_a, run_probe_a_with_clusters, run_probe_b, run_probe_b_with_clusters};
pub use synthetic::{
    generate_synthetic_corpus, DifficultyRule, SyntheticCorpus, SyntheticSpec, WinnerRule,
};

#[derive(Debug, Error)]
pub enum ProbeError {
    #[error("record {0} has no response embedding difference")]
    MissingEmbeddingDiff(String),
    #[error("model {0} is not in the model index")]
    UnknownModel(String),
    #[error("cluster {cluster} out of range for {cluster_count} clusters")]
    BadCluster { cluster: usize, cluster_count: usize },
    #[error("non-finite feature or target value")]
    NonFinite,
    #[error("only one class present")]
    SingleClass,
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("regularization strength must be finite and >= 0, got {0}")]
    BadLambda(f64),
    #[error("fold count must be at least 2, got {0}")]
    TooFewFolds(usize),
    #[error("class {class} has {count} members, fewer than {folds} folds")]
    ClassRarerThanFolds { class: usize, count: usize, folds: usize },
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("no record carries a difficulty label")]
    NoDifficulty,
    #[error("inconsistent generator spec: {0}")]
    InconsistentSpec(String),
    #[error("empty design matrix")]
    Empty,
    #[error(transparent)]
    TaskTyping(#[from] crate::tasktyping::TaskTypingError),
    #[error("report serialization: {0}")]
    Serde(#[from] serde_json::Error),
}

/// Regularizer family swept in the probes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    None,
    Ridge,
    Lasso,
}

impl Family {
    pub const ALL: [Family; 3] = [Family::None, Family::Ridge, Family::Lasso];

    pub fn label(self) -> &'static str {
        match self {
            Family::None => "None",
            Family::Ridge => "Ridge",
            Family::Lasso => "Lasso",
        }
    }
}

pub const DEFAULT_LAMBDA_GRID: [f64; 4] = [0.01, 0.1, 1.0, 10.0];
pub const DEFAULT_FOLDS: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeConfig {
    pub folds: usize,
    pub seed: u64,
    pub lambda_grid: Vec<f64>,
    pub families: Vec<Family>,
    /// Task A only: drop INVALID rows and solve the 3-class problem.
    pub exclude_invalid: bool,
    /// Iteration cap for the logistic solver.
    pub max_iters: usize,
    pub tol: f64,
    /// Skip the cluster-block ablation.
    pub skip_ablation: bool,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig {
            folds: DEFAULT_FOLDS,
            seed: 0,
            lambda_grid: DEFAULT_LAMBDA_GRID.to_vec(),
            families: Family::ALL.to_vec(),
            exclude_invalid: false,
            max_iters: 300,
            tol: 1e-6,
            skip_ablation: false,
        }
    }
}
