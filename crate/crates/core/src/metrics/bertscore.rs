//! Greedy-alignment BERTScore without IDF weighting or baseline rescaling.

use serde::{Deserialize, Serialize};

use super::embedding::{EmbedMode, EmbeddingBackend};
use super::{f1, MetricError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BertScoreResult {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

pub fn bertscore<B: EmbeddingBackend + ?Sized>(
    reference: &str,
    hypothesis: &str,
    backend: &B,
) -> Result<BertScoreResult> {
    let response = backend.embed(&[reference.to_string(), hypothesis.to_string()], EmbedMode::Token)?;
    let mut lists = response.vectors.into_iter();
    let (Some(reference), Some(hypothesis)) = (lists.next(), lists.next()) else {
        return Err(MetricError::Backend(super::embedding::BackendError::Protocol(
            "expected two vector lists".into(),
        )));
    };
    bertscore_from_vectors(&reference, &hypothesis)
}

/// Score from token vectors already fetched from a backend.
pub fn bertscore_from_vectors(reference: &[Vec<f32>], hypothesis: &[Vec<f32>]) -> Result<BertScoreResult> {
    if reference.is_empty() {
        return Err(MetricError::EmptyText("reference"));
    }
    if hypothesis.is_empty() {
        return Err(MetricError::EmptyText("hypothesis"));
    }
    // similarity[i][j] = cos(reference_i, hypothesis_j)
    let similarity: Vec<Vec<f64>> = reference
        .iter()
        .map(|r| hypothesis.iter().map(|h| cosine(r, h)).collect())
        .collect();

    let recall = similarity
        .iter()
        .map(|row| row.iter().copied().fold(f64::NEG_INFINITY, f64::max))
        .sum::<f64>()
        / reference.len() as f64;
    let precision = (0..hypothesis.len())
        .map(|j| similarity.iter().map(|row| row[j]).fold(f64::NEG_INFINITY, f64::max))
        .sum::<f64>()
        / hypothesis.len() as f64;

    Ok(BertScoreResult { precision, recall, f1: f1(precision, recall) })
}

/// Cosine similarity; zero vectors have similarity 0. Computed as
/// `dot / sqrt(|a|²·|b|²)` so that `cosine(v, v)` is exactly 1.
pub fn cosine(a: &[f32], b: &[f32]) -> f64 {
    let (mut dot, mut na, mut nb) = (0.0f64, 0.0f64, 0.0f64);
    for (&x, &y) in a.iter().zip(b) {
        let (x, y) = (f64::from(x), f64::from(y));
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    let denom = (na * nb).sqrt();
    if denom == 0.0 {
        0.0
    } else {
        (dot / denom).clamp(-1.0, 1.0)
    }
}
