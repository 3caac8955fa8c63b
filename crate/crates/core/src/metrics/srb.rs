use serde::{Deserialize, Serialize};

use super::{MetricError, Result};

/// Harmonic mean of SARI, ROUGE-L F1 and BERTScore F1, all on 0–100.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SrbScore {
    pub value: f64,
    pub sari: f64,
    pub rouge_l: f64,
    pub bert_f1: f64,
}

pub fn srb(sari: f64, rouge_l: f64, bert_f1: f64) -> Result<SrbScore> {
    for (name, value) in [("sari", sari), ("rouge_l", rouge_l), ("bert_f1", bert_f1)] {
        if !(value > 0.0) {
            return Err(MetricError::NonPositiveComponent { name, value });
        }
    }
    Ok(SrbScore {
        value: 3.0 / (1.0 / sari + 1.0 / rouge_l + 1.0 / bert_f1),
        sari,
        rouge_l,
        bert_f1,
    })
}
