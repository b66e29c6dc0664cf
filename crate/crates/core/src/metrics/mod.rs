//! Evaluation of discovered criteria and substructures against ground truth.

pub mod assignment;
pub mod clustering;
pub mod criteria;
pub mod evaluate;

use thiserror::Error;

use crate::backends::{BackendError, Backends};

pub use assignment::max_weight_assignment;
pub use clustering::{
    clustering_accuracy, harmonic_mean, select_best_granularity, semantic_accuracy, ConfusionTable,
};
pub use criteria::{
    criteria_diversity, criteria_tpr, match_criteria, CriterionMatch, CriterionMatcher, EmbeddingMatcher,
    LlmJudgeMatcher,
};
pub use evaluate::{evaluate_run, summary_tsv, EvalOptions};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricError {
    #[error("ground truth has no criteria")]
    EmptyGroundTruth,
    #[error("diversity needs at least two criteria, got {0}")]
    TooFewCriteria(usize),
    #[error("prediction and ground truth share no image ids")]
    NoOverlap,
    #[error("no substructures to choose from")]
    NoSubstructures,
    #[error(transparent)]
    Backend(#[from] BackendError),
}

/// Source of unit-norm text embeddings.
pub trait Embedder: Sync {
    fn embed_texts(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, BackendError>;
}

impl Embedder for Backends {
    fn embed_texts(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, BackendError> {
        self.embed(texts)
    }
}

/// Cosine of two unit vectors clamped to `[0, 1]`.
pub fn clamped_cosine(a: &[f64], b: &[f64]) -> f64 {
    crate::backends::cosine(a, b).clamp(0.0, 1.0)
}
