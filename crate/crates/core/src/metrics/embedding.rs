//! Embedding backends used by BERTScore (token vectors) and retrieval
//! (sequence vectors).
//!
//! Wire protocol of the HTTP backend:
//!
//! ```text
//! POST {base}/embed   {"texts": ["…"], "mode": "token" | "sequence"}
//! 200                 {"vectors": [[[f32, …], …], …], "dim": N}
//! ```
//!
//! In token mode each text maps to one vector per token; in sequence mode
//! each text maps to a list holding exactly one vector.

use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::textstats::lowercase_words;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BackendError {
    #[error("transport: {0}")]
    Transport(String),
    #[error("malformed response: {0}")]
    Protocol(String),
    #[error("inconsistent vector dimensions: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmbedMode {
    Token,
    Sequence,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedRequest {
    pub texts: Vec<String>,
    pub mode: EmbedMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedResponse {
    /// One list of vectors per input text.
    pub vectors: Vec<Vec<Vec<f32>>>,
    pub dim: usize,
}

impl EmbedResponse {
    /// Check the response against its request.
    pub fn validate(&self, request: &EmbedRequest) -> Result<(), BackendError> {
        if self.vectors.len() != request.texts.len() {
            return Err(BackendError::Protocol(format!(
                "{} vector lists for {} texts",
                self.vectors.len(),
                request.texts.len()
            )));
        }
        for list in &self.vectors {
            if request.mode == EmbedMode::Sequence && list.len() != 1 {
                return Err(BackendError::Protocol(format!(
                    "sequence mode returned {} vectors for one text",
                    list.len()
                )));
            }
            for v in list {
                if v.len() != self.dim {
                    return Err(BackendError::Dimension { expected: self.dim, got: v.len() });
                }
            }
        }
        Ok(())
    }
}

/// Source of deterministic text embeddings. Implementations must return equal
/// vectors for equal inputs and be safe to call from several threads.
pub trait EmbeddingBackend: Send + Sync {
    fn embed(&self, texts: &[String], mode: EmbedMode) -> Result<EmbedResponse, BackendError>;
}

impl<B: EmbeddingBackend + ?Sized> EmbeddingBackend for &B {
    fn embed(&self, texts: &[String], mode: EmbedMode) -> Result<EmbedResponse, BackendError> {
        (**self).embed(texts, mode)
    }
}

/// Offline pseudo-embeddings: every lowercased token hashes to a fixed
/// pseudo-random vector; a sequence vector is the mean of its token vectors.
#[derive(Debug, Clone)]
pub struct MockEmbedding {
    dim: usize,
}

impl MockEmbedding {
    pub const DEFAULT_DIM: usize = 32;

    pub fn new(dim: usize) -> Self {
        assert!(dim > 0, "embedding dimension must be positive");
        Self { dim }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn token_vector(&self, token: &str) -> Vec<f32> {
        let mut state = fnv1a(token.as_bytes());
        (0..self.dim)
            .map(|_| {
                let bits = splitmix64(&mut state) >> 40;
                (bits as f32 / (1u64 << 24) as f32) * 2.0 - 1.0
            })
            .collect()
    }

    fn embed_one(&self, text: &str, mode: EmbedMode) -> Vec<Vec<f32>> {
        let tokens = lowercase_words(text);
        let vectors: Vec<Vec<f32>> = tokens.iter().map(|t| self.token_vector(t)).collect();
        match mode {
            EmbedMode::Token => vectors,
            EmbedMode::Sequence => {
                let mut mean = vec![0.0f32; self.dim];
                for v in &vectors {
                    for (m, x) in mean.iter_mut().zip(v) {
                        *m += x;
                    }
                }
                let n = vectors.len().max(1) as f32;
                mean.iter_mut().for_each(|m| *m /= n);
                vec![mean]
            }
        }
    }
}

impl Default for MockEmbedding {
    fn default() -> Self {
        Self::new(Self::DEFAULT_DIM)
    }
}

impl EmbeddingBackend for MockEmbedding {
    fn embed(&self, texts: &[String], mode: EmbedMode) -> Result<EmbedResponse, BackendError> {
        Ok(EmbedResponse {
            vectors: texts.iter().map(|t| self.embed_one(t, mode)).collect(),
            dim: self.dim,
        })
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, &b| {
        (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Client for a remote embedding service speaking the `/embed` protocol.
pub struct HttpEmbedding {
    endpoint: String,
    agent: ureq::Agent,
    batch_size: usize,
}

impl HttpEmbedding {
    pub fn new(base_url: &str) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(120)))
            .build()
            .into();
        Self {
            endpoint: format!("{}/embed", base_url.trim_end_matches('/')),
            agent,
            batch_size: 64,
        }
    }

    pub fn with_batch_size(mut self, batch_size: usize) -> Self {
        self.batch_size = batch_size.max(1);
        self
    }

    fn post(&self, request: &EmbedRequest) -> Result<EmbedResponse, BackendError> {
        let response: EmbedResponse = self
            .agent
            .post(&self.endpoint)
            .send_json(request)
            .map_err(|e| BackendError::Transport(e.to_string()))?
            .body_mut()
            .read_json()
            .map_err(|e| BackendError::Protocol(e.to_string()))?;
        response.validate(request)?;
        Ok(response)
    }
}

impl EmbeddingBackend for HttpEmbedding {
    fn embed(&self, texts: &[String], mode: EmbedMode) -> Result<EmbedResponse, BackendError> {
        let mut vectors = Vec::with_capacity(texts.len());
        let mut dim = None;
        for chunk in texts.chunks(self.batch_size) {
            let response = self.post(&EmbedRequest { texts: chunk.to_vec(), mode })?;
            match dim {
                Some(d) if d != response.dim => {
                    return Err(BackendError::Dimension { expected: d, got: response.dim })
                }
                _ => dim = Some(response.dim),
            }
            vectors.extend(response.vectors);
        }
        Ok(EmbedResponse { vectors, dim: dim.unwrap_or(0) })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mock_is_deterministic_and_case_folded() {
        let m = MockEmbedding::new(8);
        let a = m.embed(&["Le chat".into()], EmbedMode::Token).unwrap();
        let b = m.embed(&["le CHAT".into()], EmbedMode::Token).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.vectors[0].len(), 2);
        assert!(a.vectors[0][0].iter().all(|x| (-1.0..1.0).contains(x)));
        assert_ne!(a.vectors[0][0], a.vectors[0][1]);
    }

    #[test]
    fn sequence_mode_returns_one_vector() {
        let m = MockEmbedding::default();
        let r = m
            .embed(&["un deux trois".into(), "quatre".into()], EmbedMode::Sequence)
            .unwrap();
        assert_eq!(r.vectors.len(), 2);
        assert!(r.vectors.iter().all(|l| l.len() == 1 && l[0].len() == r.dim));
        let req = EmbedRequest { texts: vec!["a".into(), "b".into()], mode: EmbedMode::Sequence };
        r.validate(&req).unwrap();
    }

    #[test]
    fn validation_catches_bad_responses() {
        let req = EmbedRequest { texts: vec!["a".into()], mode: EmbedMode::Token };
        let bad_dim = EmbedResponse { vectors: vec![vec![vec![0.0; 3]]], dim: 4 };
        assert!(matches!(bad_dim.validate(&req), Err(BackendError::Dimension { .. })));
        let bad_len = EmbedResponse { vectors: vec![], dim: 4 };
        assert!(matches!(bad_len.validate(&req), Err(BackendError::Protocol(_))));
    }

    #[test]
    fn wire_format() {
        let req = EmbedRequest { texts: vec!["x".into()], mode: EmbedMode::Sequence };
        assert_eq!(
            serde_json::to_string(&req).unwrap(),
            r#"{"texts":["x"],"mode":"sequence"}"#
        );
    }
}
