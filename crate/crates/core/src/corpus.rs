//! Paragraph-aligned rewrite corpora stored as JSONL.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::textstats::{self, StopwordList, TextError};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("duplicate pair id {0:?}")]
    DuplicateId(String),
    #[error("unknown task {0:?} (expected E, O or W)")]
    UnknownTask(String),
    #[error("unknown split {0:?}")]
    UnknownSplit(String),
    #[error("pair {id:?}: empty {field}")]
    EmptyText { id: String, field: &'static str },
    #[error("cannot compute statistics over zero pairs")]
    NoPairs,
    #[error("pair {id:?}: {source}")]
    Text { id: String, source: TextError },
}

pub type Result<T> = std::result::Result<T, CorpusError>;

/// The three rewrite tasks, serialized as single letters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum TaskKind {
    EtrRewrite,
    Summarization,
    Simplification,
}

impl TaskKind {
    pub const ALL: [TaskKind; 3] = [
        TaskKind::EtrRewrite,
        TaskKind::Summarization,
        TaskKind::Simplification,
    ];

    pub fn letter(self) -> &'static str {
        match self {
            TaskKind::EtrRewrite => "E",
            TaskKind::Summarization => "O",
            TaskKind::Simplification => "W",
        }
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.letter())
    }
}

impl FromStr for TaskKind {
    type Err = CorpusError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "E" => Ok(TaskKind::EtrRewrite),
            "O" => Ok(TaskKind::Summarization),
            "W" => Ok(TaskKind::Simplification),
            other => Err(CorpusError::UnknownTask(other.to_string())),
        }
    }
}

impl TryFrom<String> for TaskKind {
    type Error = CorpusError;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<TaskKind> for String {
    fn from(t: TaskKind) -> String {
        t.letter().to_string()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Split {
    Train,
    Validation,
    Test,
    /// Out-of-domain test set (ETR-fr-politic when present).
    TestOod,
}

impl Split {
    pub const ALL: [Split; 4] = [Split::Train, Split::Validation, Split::Test, Split::TestOod];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
            Split::TestOod => "test_ood",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = CorpusError;

    fn from_str(s: &str) -> Result<Self> {
        Split::ALL
            .into_iter()
            .find(|split| split.as_str() == s)
            .ok_or_else(|| CorpusError::UnknownSplit(s.to_string()))
    }
}

impl TryFrom<String> for Split {
    type Error = CorpusError;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Split> for String {
    fn from(s: Split) -> String {
        s.as_str().to_string()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TextPair {
    pub id: String,
    pub task: TaskKind,
    pub split: Split,
    pub source: String,
    pub target: String,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub meta: BTreeMap<String, serde_json::Value>,
}

/// Raw record as read from disk; validated into a [`TextPair`].
#[derive(Deserialize)]
struct RawRecord {
    id: String,
    task: String,
    split: String,
    source: String,
    target: String,
    #[serde(default)]
    meta: BTreeMap<String, serde_json::Value>,
}

/// An immutable, validated set of pairs indexed by (task, split).
#[derive(Debug, Clone, Default)]
pub struct Corpus {
    pairs: Vec<TextPair>,
    /// (task, split) → positions in `pairs`, sorted by id.
    index: BTreeMap<(TaskKind, Split), Vec<usize>>,
}

impl Corpus {
    pub fn from_pairs(pairs: Vec<TextPair>) -> Result<Self> {
        let mut seen = HashSet::new();
        for p in &pairs {
            if !seen.insert(p.id.as_str()) {
                return Err(CorpusError::DuplicateId(p.id.clone()));
            }
            if p.source.trim().is_empty() {
                return Err(CorpusError::EmptyText { id: p.id.clone(), field: "source" });
            }
            if p.target.trim().is_empty() {
                return Err(CorpusError::EmptyText { id: p.id.clone(), field: "target" });
            }
        }
        let mut index: BTreeMap<(TaskKind, Split), Vec<usize>> = BTreeMap::new();
        for (i, p) in pairs.iter().enumerate() {
            index.entry((p.task, p.split)).or_default().push(i);
        }
        for positions in index.values_mut() {
            positions.sort_by(|&a, &b| pairs[a].id.cmp(&pairs[b].id));
        }
        Ok(Self { pairs, index })
    }

    pub fn pairs(&self) -> &[TextPair] {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&TextPair> {
        self.pairs.iter().find(|p| p.id == id)
    }

    /// All pairs of `task` in `split`, ordered by id.
    pub fn split_view(&self, task: TaskKind, split: Split) -> Vec<&TextPair> {
        self.index
            .get(&(task, split))
            .map(|positions| positions.iter().map(|&i| &self.pairs[i]).collect())
            .unwrap_or_default()
    }

    /// Pairs in `split` across every task, ordered by (task, id).
    pub fn split_all_tasks(&self, split: Split) -> Vec<&TextPair> {
        TaskKind::ALL
            .into_iter()
            .flat_map(|t| self.split_view(t, split))
            .collect()
    }

    pub fn write_jsonl<W: Write>(&self, mut out: W) -> Result<()> {
        for p in &self.pairs {
            let line = serde_json::to_string(p).expect("pair serializes");
            writeln!(out, "{line}")?;
        }
        Ok(())
    }
}

pub fn load_corpus(path: impl AsRef<Path>) -> Result<Corpus> {
    parse_jsonl(BufReader::new(File::open(path)?))
}

/// Parse line-delimited records. Blank lines are skipped; line numbers in
/// errors are 1-based.
pub fn parse_jsonl<R: BufRead>(reader: R) -> Result<Corpus> {
    let mut pairs = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawRecord = serde_json::from_str(&line).map_err(|e| CorpusError::Parse {
            line: n + 1,
            message: e.to_string(),
        })?;
        pairs.push(TextPair {
            task: raw.task.parse()?,
            split: raw.split.parse()?,
            id: raw.id,
            source: raw.source,
            target: raw.target,
            meta: raw.meta,
        });
    }
    Corpus::from_pairs(pairs)
}

/// Per-pair statistics; the corpus table averages these.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairStats {
    pub source_words: usize,
    pub target_words: usize,
    pub source_sentences: usize,
    pub target_sentences: usize,
    /// Target words per target sentence.
    pub target_sentence_length: f64,
    pub source_kmre: f64,
    pub target_kmre: f64,
    pub compression_ratio: f64,
    /// `None` when the target has only stopwords.
    pub novelty: Option<f64>,
}

pub fn pair_stats(pair: &TextPair, stopwords: &StopwordList) -> Result<PairStats> {
    let text_err = |source| CorpusError::Text { id: pair.id.clone(), source };
    let src = textstats::tokenize(&pair.source).map_err(text_err)?;
    let tgt = textstats::tokenize(&pair.target).map_err(text_err)?;
    let novelty = match textstats::novelty_unigrams(&pair.source, &pair.target, stopwords) {
        Ok(v) => Some(v),
        Err(TextError::NoContentWords) => None,
        Err(e) => return Err(text_err(e)),
    };
    Ok(PairStats {
        source_words: src.word_count(),
        target_words: tgt.word_count(),
        source_sentences: src.sentence_count(),
        target_sentences: tgt.sentence_count(),
        target_sentence_length: tgt.word_count() as f64 / tgt.sentence_count() as f64,
        source_kmre: textstats::kmre_from_counts(
            src.word_count(),
            src.sentence_count(),
            src.syllable_count(),
        ),
        target_kmre: textstats::kmre_from_counts(
            tgt.word_count(),
            tgt.sentence_count(),
            tgt.syllable_count(),
        ),
        compression_ratio: textstats::compression_from_counts(src.word_count(), tgt.word_count()),
        novelty,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub n_pairs: usize,
    pub mean_source_words: f64,
    pub mean_target_words: f64,
    pub mean_source_sentences: f64,
    pub mean_target_sentences: f64,
    pub mean_target_sentence_length: f64,
    pub mean_source_kmre: f64,
    pub mean_target_kmre: f64,
    pub mean_compression_ratio: f64,
    /// Mean over pairs whose target has at least one content word.
    pub mean_novelty: f64,
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Unweighted per-pair means.
pub fn corpus_stats(pairs: &[&TextPair], stopwords: &StopwordList) -> Result<CorpusStats> {
    if pairs.is_empty() {
        return Err(CorpusError::NoPairs);
    }
    let per_pair = pairs
        .iter()
        .map(|p| pair_stats(p, stopwords))
        .collect::<Result<Vec<_>>>()?;
    Ok(CorpusStats {
        n_pairs: per_pair.len(),
        mean_source_words: mean(per_pair.iter().map(|s| s.source_words as f64)),
        mean_target_words: mean(per_pair.iter().map(|s| s.target_words as f64)),
        mean_source_sentences: mean(per_pair.iter().map(|s| s.source_sentences as f64)),
        mean_target_sentences: mean(per_pair.iter().map(|s| s.target_sentences as f64)),
        mean_target_sentence_length: mean(per_pair.iter().map(|s| s.target_sentence_length)),
        mean_source_kmre: mean(per_pair.iter().map(|s| s.source_kmre)),
        mean_target_kmre: mean(per_pair.iter().map(|s| s.target_kmre)),
        mean_compression_ratio: mean(per_pair.iter().map(|s| s.compression_ratio)),
        mean_novelty: mean(per_pair.iter().filter_map(|s| s.novelty)),
    })
}

const STATS_COLUMNS: [&str; 10] = [
    "Pairs",
    "Words (src)",
    "Words (tgt)",
    "Sents (src)",
    "Sents (tgt)",
    "Sent. len (tgt)",
    "KMRE (src)",
    "KMRE (tgt)",
    "Comp. ratio",
    "Novelty",
];

fn stats_cells(s: &CorpusStats) -> Vec<String> {
    let mut cells = vec![s.n_pairs.to_string()];
    cells.extend(
        [
            s.mean_source_words,
            s.mean_target_words,
            s.mean_source_sentences,
            s.mean_target_sentences,
            s.mean_target_sentence_length,
            s.mean_source_kmre,
            s.mean_target_kmre,
            s.mean_compression_ratio,
            s.mean_novelty,
        ]
        .iter()
        .map(|v| crate::format::round2(*v)),
    );
    cells
}

/// Render labelled rows as a Markdown table.
pub fn stats_markdown(rows: &[(String, CorpusStats)]) -> String {
    let mut out = format!("| Subset | {} |\n", STATS_COLUMNS.join(" | "));
    out.push_str(&format!("|---|{}\n", "---:|".repeat(STATS_COLUMNS.len())));
    for (label, s) in rows {
        out.push_str(&format!("| {label} | {} |\n", stats_cells(s).join(" | ")));
    }
    out
}

pub fn stats_csv(rows: &[(String, CorpusStats)]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["Subset"];
    header.extend(STATS_COLUMNS);
    w.write_record(&header).expect("in-memory write");
    for (label, s) in rows {
        let mut record = vec![label.clone()];
        record.extend(stats_cells(s));
        w.write_record(&record).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("flush")).expect("utf-8")
}
