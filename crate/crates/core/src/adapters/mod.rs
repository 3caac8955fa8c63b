//! Low-rank adapters on dense matrices.
//!
//! [`LoraLayer`] computes `h = W0·x + (α/r)·B·A·x`. [`MtlLoraLayer`] shares
//! the down-projection `A` across tasks, applies a per-task `r×r` transform
//! `Λ_t`, and mixes `n` up-projections `B^i` with a per-task softmax at
//! temperature τ:
//!
//! ```text
//! h_t = W·x + Σ_i softmax(logits_t / τ)_i · B^i · Λ_t · A · x
//! ```
//!
//! No `α/r` factor appears in the MTL form; `Λ_t = (α/r)·I` with a single
//! up-projection recovers the plain LoRA layer.

mod gradcheck;
mod layers;
mod loss;
mod matrix;
mod serialize;
pub mod trainer;

use thiserror::Error;

pub use gradcheck::{grad_check, GradCheckReport};
pub use layers::{
    mixture_weights, mixture_weights_backward, AdapterLayer, LoraGrads, LoraLayer, MtlLoraGrads,
    MtlLoraLayer, DEFAULT_TAU,
};
pub use loss::{completion_nll, mtl_loss, CompletionBatch, TaskWeights};
pub use matrix::Matrix;
pub use serialize::{read_layer, write_layer, StoredLayer};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AdapterError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("rank {rank} exceeds min(d, k) = {limit}")]
    RankTooLarge { rank: usize, limit: usize },
    #[error("task index {index} out of range for {n_tasks} tasks")]
    TaskIndex { index: usize, n_tasks: usize },
    #[error("temperature must be > 0, got {0}")]
    Temperature(f64),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("invalid task weights: {0}")]
    Weights(String),
    #[error("layer file: {0}")]
    Format(String),
}

pub type Result<T> = std::result::Result<T, AdapterError>;
