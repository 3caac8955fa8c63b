use serde::{Deserialize, Serialize};

use super::{AdapterError, Result};

/// Per-position log-probabilities of the realized tokens of an
/// instruction + completion sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionBatch {
    logprobs: Vec<f64>,
    /// `true` on completion tokens, `false` on instruction tokens.
    completion_mask: Vec<bool>,
}

impl CompletionBatch {
    pub fn new(logprobs: Vec<f64>, completion_mask: Vec<bool>) -> Result<Self> {
        if logprobs.len() != completion_mask.len() {
            return Err(AdapterError::Dimension(format!(
                "{} log-probabilities for {} mask entries",
                logprobs.len(),
                completion_mask.len()
            )));
        }
        if logprobs.iter().any(|&lp| lp.is_nan() || lp > 0.0) {
            return Err(AdapterError::Dimension("log-probabilities must be <= 0".into()));
        }
        Ok(Self { logprobs, completion_mask })
    }

    /// Instruction tokens followed by completion tokens.
    pub fn from_segments(instruction: &[f64], completion: &[f64]) -> Result<Self> {
        let mut logprobs = instruction.to_vec();
        logprobs.extend_from_slice(completion);
        let mut mask = vec![false; instruction.len()];
        mask.resize(logprobs.len(), true);
        Self::new(logprobs, mask)
    }

    pub fn len(&self) -> usize {
        self.logprobs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.logprobs.is_empty()
    }
}

/// Negative log-likelihood of the completion tokens only.
pub fn completion_nll(batch: &CompletionBatch) -> f64 {
    -batch
        .logprobs
        .iter()
        .zip(&batch.completion_mask)
        .filter(|(_, &m)| m)
        .map(|(lp, _)| lp)
        .sum::<f64>()
}

/// Task loss weights `N_t / N` from per-task training example counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskWeights {
    counts: Vec<usize>,
    weights: Vec<f64>,
}

impl TaskWeights {
    pub fn from_counts(counts: &[usize]) -> Result<Self> {
        if counts.is_empty() {
            return Err(AdapterError::Weights("no tasks".into()));
        }
        if counts.contains(&0) {
            return Err(AdapterError::Weights("every task needs at least one example".into()));
        }
        let total: usize = counts.iter().sum();
        let weights = counts.iter().map(|&n| n as f64 / total as f64).collect();
        Ok(Self { counts: counts.to_vec(), weights })
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }
}

/// `Σ_t w_t · L_t`. Equal task losses return that loss exactly.
pub fn mtl_loss(per_task_losses: &[f64], weights: &TaskWeights) -> Result<f64> {
    if per_task_losses.len() != weights.weights.len() {
        return Err(AdapterError::Weights(format!(
            "{} task losses for {} weights",
            per_task_losses.len(),
            weights.weights.len()
        )));
    }
    let first = per_task_losses[0];
    if per_task_losses.iter().all(|&l| l == first) {
        return Ok(first);
    }
    Ok(per_task_losses
        .iter()
        .zip(&weights.weights)
        .map(|(l, w)| w * l)
        .sum())
}
