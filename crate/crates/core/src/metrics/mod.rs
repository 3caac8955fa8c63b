//! Reference-based generation metrics.
//!
//! ROUGE and BERTScore are computed in `[0, 1]`; SARI in `[0, 100]`.
//! [`srb`] takes all three components on the 0–100 scale.
//!
//! Texts are lowercased and split with [`crate::textstats::words`]; no
//! stemming is applied.

pub mod bertscore;
pub mod embedding;
pub mod rouge;
pub mod sari;
pub mod srb;

use thiserror::Error;

pub use bertscore::{bertscore, bertscore_from_vectors, BertScoreResult};
pub use rouge::{rouge_l, rouge_n, RougeScore};
pub use sari::{sari, SariScore};
pub use srb::{srb, SrbScore};

#[derive(Debug, Error)]
pub enum MetricError {
    #[error("n-gram order must be at least 1")]
    ZeroOrder,
    #[error("{0} text has no tokens")]
    EmptyText(&'static str),
    #[error("at least one reference is required")]
    NoReferences,
    #[error("SRB component {name} must be > 0, got {value}")]
    NonPositiveComponent { name: &'static str, value: f64 },
    #[error("embedding backend: {0}")]
    Backend(#[from] embedding::BackendError),
}

pub type Result<T> = std::result::Result<T, MetricError>;

/// Harmonic mean of precision and recall, 0 when their sum is not positive.
pub(crate) fn f1(precision: f64, recall: f64) -> f64 {
    if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    }
}
