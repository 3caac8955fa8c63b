//! Toolkit for easy-to-read (ETR) text generation experiments.
//!
//! - [`corpus`]: JSONL rewrite corpora, split views and descriptive statistics.
//! - [`textstats`]: tokenization, French syllables, KMRE, compression, novelty.
//! - [`metrics`]: ROUGE, SARI, BERTScore and the SRB composite.
//! - [`adapters`]: LoRA / MTL-LoRA layers, completion losses, gradient checks.
//! - [`retrieval`]: few-shot demonstration retrieval, ordering and prompts.
//! - [`genpipe`]: LLM backends, cached generation and multi-seed runs.
//! - [`evalharness`]: scoring, seed aggregation, model selection, reports.

pub mod adapters;
pub mod corpus;
pub mod evalharness;
pub mod format;
pub mod genpipe;
pub mod metrics;
pub mod retrieval;
pub mod rng;
pub mod textstats;

pub use corpus::{Corpus, Split, TaskKind, TextPair};
pub use metrics::embedding::{EmbedMode, EmbeddingBackend, MockEmbedding};
