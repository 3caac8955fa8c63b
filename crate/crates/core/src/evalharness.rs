//! Scoring of generation runs, seed aggregation, SRB-based selection and
//! report rendering.
//!
//! All metric values are on the 0–100 scale. The headline SRB of a report is
//! the harmonic mean of the corpus-level SARI, ROUGE-L and BERTScore means;
//! the per-sample SRB in each row is informational only.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Corpus, TextPair};
use crate::format::round2;
use crate::genpipe::GenerationRecord;
use crate::metrics::embedding::{EmbedMode, EmbeddingBackend};
use crate::metrics::{self, bertscore_from_vectors, MetricError};
use crate::textstats::{self, StopwordList};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("record refers to unknown pair {0:?}")]
    UnknownPair(String),
    #[error("pair {0:?} appears twice in the run")]
    DuplicatePair(String),
    #[error("nothing to evaluate")]
    Empty,
    #[error("cannot aggregate reports from different configurations: {0:?} and {1:?}")]
    MixedConfigurations(String, String),
    #[error("no candidates to select from")]
    NoCandidates,
    #[error("pair {id}: {source}")]
    Metric { id: String, source: MetricError },
    #[error("pair {id}: {source}")]
    Text { id: String, source: textstats::TextError },
    #[error("embedding backend: {0}")]
    Backend(#[from] metrics::embedding::BackendError),
}

pub type Result<T> = std::result::Result<T, EvalError>;

/// Metric values for one generated output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricBundle {
    pub id: String,
    pub rouge1: f64,
    pub rouge2: f64,
    pub rouge_l: f64,
    pub sari: f64,
    pub bert_f1: f64,
    pub compression_ratio: f64,
    pub novelty: f64,
    pub kmre: Option<f64>,
    /// `None` when one of its components is zero.
    pub srb: Option<f64>,
}

/// The eight reported columns.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricSummary {
    pub rouge1: f64,
    pub rouge2: f64,
    pub rouge_l: f64,
    pub sari: f64,
    pub bert_f1: f64,
    pub srb: f64,
    pub compression_ratio: f64,
    pub novelty: f64,
}

pub const COLUMNS: [&str; 8] = ["R-1", "R-2", "R-L", "SARI", "BERT-F1", "SRB", "Comp. ratio", "Novelty"];

impl MetricSummary {
    pub fn values(&self) -> [f64; 8] {
        [
            self.rouge1,
            self.rouge2,
            self.rouge_l,
            self.sari,
            self.bert_f1,
            self.srb,
            self.compression_ratio,
            self.novelty,
        ]
    }

    pub fn from_values(v: [f64; 8]) -> Self {
        Self {
            rouge1: v[0],
            rouge2: v[1],
            rouge_l: v[2],
            sari: v[3],
            bert_f1: v[4],
            srb: v[5],
            compression_ratio: v[6],
            novelty: v[7],
        }
    }
}

/// Corpus SRB from corpus means; 0 when a component mean is 0.
pub fn corpus_srb(sari: f64, rouge_l: f64, bert_f1: f64) -> f64 {
    metrics::srb(sari, rouge_l, bert_f1).map(|s| s.value).unwrap_or(0.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub descriptor: String,
    pub seed: u64,
    /// Sorted by pair id.
    pub rows: Vec<MetricBundle>,
    pub means: MetricSummary,
}

fn score_text(pair: &TextPair, output: &str, stopwords: &StopwordList) -> Result<MetricBundle> {
    let text = |source| EvalError::Text { id: pair.id.clone(), source };
    let reference = textstats::lowercase_words(&pair.target);
    let hypothesis = textstats::lowercase_words(output);
    let source = textstats::lowercase_words(&pair.source);
    if hypothesis.is_empty() {
        return Ok(MetricBundle {
            id: pair.id.clone(),
            rouge1: 0.0,
            rouge2: 0.0,
            rouge_l: 0.0,
            sari: 0.0,
            bert_f1: 0.0,
            compression_ratio: 100.0,
            novelty: 0.0,
            kmre: None,
            srb: None,
        });
    }
    let r1 = metrics::rouge::rouge_n_tokens(&reference, &hypothesis, 1);
    let r2 = metrics::rouge::rouge_n_tokens(&reference, &hypothesis, 2);
    let rl = metrics::rouge::rouge_l_tokens(&reference, &hypothesis);
    let sari = metrics::sari::sari_tokens(&source, &hypothesis, std::slice::from_ref(&reference));
    let novelty = match textstats::novelty_unigrams(&pair.source, output, stopwords) {
        Ok(v) => v,
        Err(textstats::TextError::NoContentWords) => 0.0,
        Err(e) => return Err(text(e)),
    };
    let compression = textstats::compression_from_counts(source.len(), hypothesis.len());
    Ok(MetricBundle {
        id: pair.id.clone(),
        rouge1: 100.0 * r1.f1,
        rouge2: 100.0 * r2.f1,
        rouge_l: 100.0 * rl.f1,
        sari: sari.sari,
        bert_f1: 0.0,
        compression_ratio: compression,
        novelty,
        kmre: textstats::kmre(output).ok(),
        srb: None,
    })
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Score one seed's records against the corpus references.
pub fn evaluate_run<B: EmbeddingBackend + ?Sized>(
    descriptor: &str,
    seed: u64,
    records: &[GenerationRecord],
    corpus: &Corpus,
    backend: &B,
    stopwords: &StopwordList,
) -> Result<EvaluationReport> {
    if records.is_empty() {
        return Err(EvalError::Empty);
    }
    let mut seen = HashSet::new();
    let mut items: Vec<(&TextPair, &str)> = Vec::with_capacity(records.len());
    for r in records {
        let pair = corpus.get(&r.pair_id).ok_or_else(|| EvalError::UnknownPair(r.pair_id.clone()))?;
        if !seen.insert(r.pair_id.as_str()) {
            return Err(EvalError::DuplicatePair(r.pair_id.clone()));
        }
        items.push((pair, r.output.as_str()));
    }
    items.sort_by(|a, b| a.0.id.cmp(&b.0.id));

    let mut rows = items
        .par_iter()
        .map(|(pair, output)| score_text(pair, output, stopwords))
        .collect::<Result<Vec<_>>>()?;

    // One batched embedding call for every scorable (reference, output) pair.
    let scorable: Vec<usize> = (0..items.len()).filter(|&i| !textstats::words(items[i].1).is_empty()).collect();
    let mut texts = Vec::with_capacity(2 * scorable.len());
    for &i in &scorable {
        texts.push(items[i].0.target.clone());
        texts.push(items[i].1.to_string());
    }
    if !texts.is_empty() {
        let response = backend.embed(&texts, EmbedMode::Token)?;
        if response.vectors.len() != texts.len() {
            return Err(metrics::embedding::BackendError::Protocol(format!(
                "expected {} vector lists, got {}",
                texts.len(),
                response.vectors.len()
            ))
            .into());
        }
        for (k, &i) in scorable.iter().enumerate() {
            let score = bertscore_from_vectors(&response.vectors[2 * k], &response.vectors[2 * k + 1])
                .map_err(|source| EvalError::Metric { id: items[i].0.id.clone(), source })?;
            rows[i].bert_f1 = 100.0 * score.f1;
        }
    }
    for row in &mut rows {
        row.srb = metrics::srb(row.sari, row.rouge_l, row.bert_f1).ok().map(|s| s.value);
    }

    let m = |f: fn(&MetricBundle) -> f64| mean(rows.iter().map(f));
    let (sari, rouge_l, bert_f1) = (m(|r| r.sari), m(|r| r.rouge_l), m(|r| r.bert_f1));
    let means = MetricSummary {
        rouge1: m(|r| r.rouge1),
        rouge2: m(|r| r.rouge2),
        rouge_l,
        sari,
        bert_f1,
        srb: corpus_srb(sari, rouge_l, bert_f1),
        compression_ratio: m(|r| r.compression_ratio),
        novelty: m(|r| r.novelty),
    };
    Ok(EvaluationReport { descriptor: descriptor.to_string(), seed, rows, means })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateReport {
    pub descriptor: String,
    pub seeds: Vec<u64>,
    pub mean: MetricSummary,
    /// Sample standard deviation; 0 for a single seed.
    pub std: MetricSummary,
}

/// Mean and sample standard deviation of each column across seeds.
pub fn aggregate_seeds(reports: &[EvaluationReport]) -> Result<AggregateReport> {
    let first = reports.first().ok_or(EvalError::Empty)?;
    if let Some(other) = reports.iter().find(|r| r.descriptor != first.descriptor) {
        return Err(EvalError::MixedConfigurations(first.descriptor.clone(), other.descriptor.clone()));
    }
    let n = reports.len() as f64;
    let mut mean = [0.0; 8];
    let mut std = [0.0; 8];
    for c in 0..8 {
        let column: Vec<f64> = reports.iter().map(|r| r.means.values()[c]).collect();
        mean[c] = column.iter().sum::<f64>() / n;
        if column.iter().all(|&v| v == column[0]) {
            mean[c] = column[0];
        } else if reports.len() > 1 {
            let ss: f64 = column.iter().map(|v| (v - mean[c]).powi(2)).sum();
            std[c] = (ss / (n - 1.0)).sqrt();
        }
    }
    Ok(AggregateReport {
        descriptor: first.descriptor.clone(),
        seeds: reports.iter().map(|r| r.seed).collect(),
        mean: MetricSummary::from_values(mean),
        std: MetricSummary::from_values(std),
    })
}

/// Configuration with the highest mean SRB; ties go to the
/// lexicographically smallest descriptor.
pub fn select_best(candidates: &BTreeMap<String, AggregateReport>) -> Result<&str> {
    let mut best: Option<(&str, f64)> = None;
    // BTreeMap iterates in ascending key order, so a strict comparison keeps
    // the first descriptor on ties.
    for (name, report) in candidates {
        let score = report.mean.srb;
        match best {
            Some((_, s)) if !(score > s) => {}
            _ => best = Some((name, score)),
        }
    }
    best.map(|(n, _)| n).ok_or(EvalError::NoCandidates)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Markdown,
}

impl std::str::FromStr for ReportFormat {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "csv" => Ok(Self::Csv),
            "markdown" | "md" => Ok(Self::Markdown),
            other => Err(format!("unknown format {other:?} (expected csv or markdown)")),
        }
    }
}

/// One row per configuration. CSV has a `<column> std` companion for every
/// metric; Markdown shows `mean ± std`.
pub fn render_report(reports: &[AggregateReport], format: ReportFormat) -> String {
    match format {
        ReportFormat::Csv => {
            let mut out = csv::Writer::from_writer(Vec::new());
            let mut header = vec!["Configuration".to_string(), "Seeds".to_string()];
            for c in COLUMNS {
                header.push(c.to_string());
                header.push(format!("{c} std"));
            }
            out.write_record(&header).expect("in-memory write");
            for r in reports {
                let mut row = vec![r.descriptor.clone(), r.seeds.len().to_string()];
                for (m, s) in r.mean.values().iter().zip(r.std.values()) {
                    row.push(round2(*m));
                    row.push(round2(s));
                }
                out.write_record(&row).expect("in-memory write");
            }
            String::from_utf8(out.into_inner().expect("in-memory flush")).expect("utf-8 input")
        }
        ReportFormat::Markdown => {
            let mut out = String::new();
            let _ = writeln!(out, "| Configuration | {} |", COLUMNS.join(" | "));
            let _ = writeln!(out, "|---|{}", "---:|".repeat(COLUMNS.len()));
            for r in reports {
                let cells: Vec<String> = r
                    .mean
                    .values()
                    .iter()
                    .zip(r.std.values())
                    .map(|(m, s)| format!("{} ± {}", round2(*m), round2(s)))
                    .collect();
                let _ = writeln!(out, "| {} | {} |", r.descriptor.replace('|', "\\|"), cells.join(" | "));
            }
            out
        }
    }
}
