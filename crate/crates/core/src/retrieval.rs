//! Few-shot demonstration retrieval and prompt assembly.
//!
//! Pairs are indexed by a sequence-level embedding of their *source* text.
//! At query time the input text is embedded the same way and the `k`
//! nearest pairs (Euclidean distance) of each configured task are selected,
//! then arranged by one of three orderings:
//!
//! - `Grouped`: every demonstration of the first task, then the next task…
//! - `Interleaved`: round-robin across tasks.
//! - `Random`: a seeded uniform shuffle (ChaCha8, see [`crate::rng`]).

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap, HashSet};
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Corpus, Split, TaskKind, TextPair};
use crate::metrics::embedding::{BackendError, EmbedMode, EmbeddingBackend};
use crate::rng::SeededRng;

#[derive(Debug, Error)]
pub enum RetrievalError {
    #[error("embedding backend: {0}")]
    Backend(#[from] BackendError),
    #[error("cannot index zero pairs")]
    EmptyPool,
    #[error("duplicate pair id {0:?} in index")]
    DuplicateId(String),
    #[error("vector dimension {got} does not match index dimension {expected}")]
    Dimension { expected: usize, got: usize },
    #[error("k must be at least 1")]
    ZeroK,
    #[error("invalid retrieval config: {0}")]
    Config(String),
    #[error("no demonstrations for task {0}")]
    MissingTask(TaskKind),
    #[error("few-shot prompts need at least one demonstration")]
    NoDemonstrations,
    #[error("{0} prompts take no demonstrations")]
    UnexpectedDemonstrations(PromptTemplate),
    #[error("unknown {kind} {value:?}")]
    Unknown { kind: &'static str, value: String },
    #[error("index file: {0}")]
    Io(#[from] std::io::Error),
    #[error("index file: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, RetrievalError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexEntry {
    pub id: String,
    pub task: TaskKind,
    pub vector: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingIndex {
    dim: usize,
    entries: Vec<IndexEntry>,
}

/// On-disk form of an index.
#[derive(Serialize, Deserialize)]
struct IndexFile {
    format: String,
    version: u32,
    dim: usize,
    count: usize,
    entries: Vec<IndexEntry>,
}

const INDEX_FORMAT: &str = "etr-embedding-index";
const INDEX_VERSION: u32 = 1;

impl EmbeddingIndex {
    pub fn new(dim: usize, entries: Vec<IndexEntry>) -> Result<Self> {
        let mut seen = HashSet::new();
        for e in &entries {
            if !seen.insert(e.id.as_str()) {
                return Err(RetrievalError::DuplicateId(e.id.clone()));
            }
            if e.vector.len() != dim {
                return Err(RetrievalError::Dimension { expected: dim, got: e.vector.len() });
            }
        }
        Ok(Self { dim, entries })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn entries(&self) -> &[IndexEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = IndexFile {
            format: INDEX_FORMAT.into(),
            version: INDEX_VERSION,
            dim: self.dim,
            count: self.entries.len(),
            entries: self.entries.clone(),
        };
        fs::write(path, serde_json::to_vec(&file)?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let file: IndexFile = serde_json::from_slice(&fs::read(path)?)?;
        if file.format != INDEX_FORMAT || file.version != INDEX_VERSION {
            return Err(RetrievalError::Config(format!(
                "unsupported index format {} v{}",
                file.format, file.version
            )));
        }
        if file.count != file.entries.len() {
            return Err(RetrievalError::Config(format!(
                "header count {} but {} entries",
                file.count,
                file.entries.len()
            )));
        }
        Self::new(file.dim, file.entries)
    }
}

/// Embed every pair's source text at sequence level.
pub fn build_index<B: EmbeddingBackend + ?Sized>(pairs: &[&TextPair], backend: &B) -> Result<EmbeddingIndex> {
    if pairs.is_empty() {
        return Err(RetrievalError::EmptyPool);
    }
    let texts: Vec<String> = pairs.iter().map(|p| p.source.clone()).collect();
    let response = backend.embed(&texts, EmbedMode::Sequence)?;
    if response.vectors.len() != pairs.len() {
        return Err(BackendError::Protocol(format!(
            "{} vectors for {} texts",
            response.vectors.len(),
            pairs.len()
        ))
        .into());
    }
    let entries = pairs
        .iter()
        .zip(response.vectors)
        .map(|(p, mut list)| {
            let vector = list.pop().ok_or_else(|| BackendError::Protocol("empty vector list".into()))?;
            Ok(IndexEntry { id: p.id.clone(), task: p.task, vector })
        })
        .collect::<Result<Vec<_>>>()?;
    EmbeddingIndex::new(response.dim, entries)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Neighbor {
    pub id: String,
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnnResult {
    pub neighbors: Vec<Neighbor>,
    /// Fewer than `k` candidates were available.
    pub truncated: bool,
}

pub fn squared_l2(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = f64::from(x) - f64::from(y);
            d * d
        })
        .sum()
}

/// Max-heap element: the worst retained candidate sits on top.
struct Candidate<'a> {
    dist_sq: f64,
    id: &'a str,
}

impl PartialEq for Candidate<'_> {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Candidate<'_> {}
impl PartialOrd for Candidate<'_> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Candidate<'_> {
    fn cmp(&self, other: &Self) -> Ordering {
        self.dist_sq.total_cmp(&other.dist_sq).then_with(|| self.id.cmp(other.id))
    }
}

/// The `k` entries of `task` closest to `query`, ascending by distance, ties
/// broken by id. `exclude` drops one id (the query pair itself).
pub fn knn(
    index: &EmbeddingIndex,
    query: &[f32],
    k: usize,
    task: TaskKind,
    exclude: Option<&str>,
) -> Result<KnnResult> {
    if k == 0 {
        return Err(RetrievalError::ZeroK);
    }
    if query.len() != index.dim {
        return Err(RetrievalError::Dimension { expected: index.dim, got: query.len() });
    }
    let mut heap: BinaryHeap<Candidate> = BinaryHeap::with_capacity(k + 1);
    for e in &index.entries {
        if e.task != task || exclude == Some(e.id.as_str()) {
            continue;
        }
        let candidate = Candidate { dist_sq: squared_l2(&e.vector, query), id: &e.id };
        if heap.len() < k {
            heap.push(candidate);
        } else if heap.peek().is_some_and(|worst| candidate < *worst) {
            heap.pop();
            heap.push(candidate);
        }
    }
    let truncated = heap.len() < k;
    let neighbors = heap
        .into_sorted_vec()
        .into_iter()
        .map(|c| Neighbor { id: c.id.to_string(), distance: c.dist_sq.sqrt() })
        .collect();
    Ok(KnnResult { neighbors, truncated })
}

/// Demonstration ordering strategy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DemoOrdering {
    Random,
    Grouped,
    Interleaved,
}

impl fmt::Display for DemoOrdering {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DemoOrdering::Random => "random",
            DemoOrdering::Grouped => "grouped",
            DemoOrdering::Interleaved => "interleaved",
        })
    }
}

impl FromStr for DemoOrdering {
    type Err = RetrievalError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random" => Ok(DemoOrdering::Random),
            "grouped" => Ok(DemoOrdering::Grouped),
            "interleaved" => Ok(DemoOrdering::Interleaved),
            _ => Err(RetrievalError::Unknown { kind: "ordering", value: s.into() }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalConfig {
    pub shots_per_task: usize,
    pub tasks: Vec<TaskKind>,
    pub ordering: DemoOrdering,
    pub seed: u64,
    /// Split the demonstration pool is drawn from.
    #[serde(default = "default_pool")]
    pub pool_split: Split,
}

fn default_pool() -> Split {
    Split::Train
}

impl RetrievalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.shots_per_task == 0 {
            return Err(RetrievalError::ZeroK);
        }
        if self.tasks.is_empty() {
            return Err(RetrievalError::Config("no tasks".into()));
        }
        let unique: HashSet<_> = self.tasks.iter().collect();
        if unique.len() != self.tasks.len() {
            return Err(RetrievalError::Config("duplicate task".into()));
        }
        Ok(())
    }
}

/// Arrange per-task demonstrations. Buckets are visited in `config.tasks`
/// order and may be shorter than `k` when the pool ran out.
pub fn order_demonstrations(
    per_task: &BTreeMap<TaskKind, Vec<TextPair>>,
    config: &RetrievalConfig,
) -> Result<Vec<(TaskKind, TextPair)>> {
    config.validate()?;
    let buckets = config
        .tasks
        .iter()
        .map(|t| per_task.get(t).map(|b| (*t, b)).ok_or(RetrievalError::MissingTask(*t)))
        .collect::<Result<Vec<_>>>()?;

    let mut out = Vec::new();
    match config.ordering {
        DemoOrdering::Grouped | DemoOrdering::Random => {
            for (task, bucket) in &buckets {
                out.extend(bucket.iter().map(|p| (*task, p.clone())));
            }
            if config.ordering == DemoOrdering::Random {
                SeededRng::new(config.seed).shuffle(&mut out);
            }
        }
        DemoOrdering::Interleaved => {
            let longest = buckets.iter().map(|(_, b)| b.len()).max().unwrap_or(0);
            for round in 0..longest {
                for (task, bucket) in &buckets {
                    if let Some(p) = bucket.get(round) {
                        out.push((*task, p.clone()));
                    }
                }
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PromptTemplate {
    ZeroShot,
    Cot,
    FewShot,
}

impl fmt::Display for PromptTemplate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PromptTemplate::ZeroShot => "zeroshot",
            PromptTemplate::Cot => "cot",
            PromptTemplate::FewShot => "fewshot",
        })
    }
}

pub const INPUT_MARKER: &str = "<Input>";
pub const OUTPUT_MARKER: &str = "<Output>";
const COT_DIRECTIVE: &str = "Let's think step by step: first list the essential information, \
then rewrite it with short sentences and everyday words. Write only the final text after the output marker.";

/// Default instruction for each task.
pub fn task_instruction(task: TaskKind) -> &'static str {
    match task {
        TaskKind::EtrRewrite => {
            "Rewrite the following text in Easy-to-Read language: short sentences, \
             common words, one idea per sentence, keep only the important information."
        }
        TaskKind::Summarization => "Summarize the following text in a few sentences.",
        TaskKind::Simplification => "Simplify the following text so that it is easier to understand.",
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptPlan {
    pub template: PromptTemplate,
    pub demonstrations: Vec<(TaskKind, TextPair)>,
    pub rendered: String,
}

impl PromptPlan {
    pub fn demonstration_ids(&self) -> Vec<&str> {
        self.demonstrations.iter().map(|(_, p)| p.id.as_str()).collect()
    }
}

/// Render the instruction, the demonstrations as tagged Input/Output
/// sections, then the target input and an open output marker.
pub fn render_prompt(
    template: PromptTemplate,
    demonstrations: Vec<(TaskKind, TextPair)>,
    target_source: &str,
    instruction: &str,
) -> Result<PromptPlan> {
    match (template, demonstrations.is_empty()) {
        (PromptTemplate::FewShot, true) => return Err(RetrievalError::NoDemonstrations),
        (PromptTemplate::ZeroShot | PromptTemplate::Cot, false) => {
            return Err(RetrievalError::UnexpectedDemonstrations(template))
        }
        _ => {}
    }
    let mut out = String::new();
    out.push_str(instruction.trim());
    out.push_str("\n\n");
    for (task, pair) in &demonstrations {
        out.push_str(&format!(
            "Task: {task}\n{INPUT_MARKER}\n{}\n{OUTPUT_MARKER}\n{}\n\n",
            pair.source.trim(),
            pair.target.trim()
        ));
    }
    out.push_str(&format!("{INPUT_MARKER}\n{}\n", target_source.trim()));
    if template == PromptTemplate::Cot {
        out.push_str(COT_DIRECTIVE);
        out.push('\n');
    }
    out.push_str(OUTPUT_MARKER);
    out.push('\n');
    Ok(PromptPlan { template, demonstrations, rendered: out })
}

/// Index plus configuration: turns an input text into a few-shot plan.
pub struct Retriever<'a> {
    corpus: &'a Corpus,
    index: EmbeddingIndex,
    config: RetrievalConfig,
}

impl<'a> Retriever<'a> {
    /// Index the configured tasks' `pool_split` pairs.
    pub fn build<B: EmbeddingBackend + ?Sized>(
        corpus: &'a Corpus,
        config: RetrievalConfig,
        backend: &B,
    ) -> Result<Self> {
        config.validate()?;
        let pool: Vec<&TextPair> = config
            .tasks
            .iter()
            .flat_map(|&t| corpus.split_view(t, config.pool_split))
            .collect();
        let index = build_index(&pool, backend)?;
        Ok(Self { corpus, index, config })
    }

    pub fn config(&self) -> &RetrievalConfig {
        &self.config
    }

    pub fn index(&self) -> &EmbeddingIndex {
        &self.index
    }

    /// Retrieve and order demonstrations for `source`; `exclude_id` keeps a
    /// pair from being its own demonstration.
    pub fn demonstrations<B: EmbeddingBackend + ?Sized>(
        &self,
        source: &str,
        exclude_id: Option<&str>,
        backend: &B,
    ) -> Result<Vec<(TaskKind, TextPair)>> {
        let response = backend.embed(&[source.to_string()], EmbedMode::Sequence)?;
        let query = response
            .vectors
            .into_iter()
            .next()
            .and_then(|mut l| l.pop())
            .ok_or_else(|| BackendError::Protocol("no query vector".into()))?;
        let mut per_task = BTreeMap::new();
        for &task in &self.config.tasks {
            let hits = knn(&self.index, &query, self.config.shots_per_task, task, exclude_id)?;
            let pairs = hits
                .neighbors
                .iter()
                .filter_map(|n| self.corpus.get(&n.id).cloned())
                .collect();
            per_task.insert(task, pairs);
        }
        order_demonstrations(&per_task, &self.config)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::embedding::MockEmbedding;

    fn pair(id: &str, task: TaskKind, source: &str) -> TextPair {
        TextPair {
            id: id.into(),
            task,
            split: Split::Train,
            source: source.into(),
            target: format!("{source} (cible)"),
            meta: Default::default(),
        }
    }

    fn toy_index() -> EmbeddingIndex {
        let e = |id: &str, v: [f32; 2]| IndexEntry { id: id.into(), task: TaskKind::EtrRewrite, vector: v.to_vec() };
        EmbeddingIndex::new(2, vec![e("a", [0.0, 0.0]), e("b", [3.0, 4.0]), e("c", [1.0, 1.0])]).unwrap()
    }

    #[test]
    fn knn_toy_distances() {
        let r = knn(&toy_index(), &[0.0, 0.0], 2, TaskKind::EtrRewrite, None).unwrap();
        assert_eq!(r.neighbors[0], Neighbor { id: "a".into(), distance: 0.0 });
        assert_eq!(r.neighbors[1].id, "c");
        assert!((r.neighbors[1].distance - 2f64.sqrt()).abs() < 1e-15);
        assert!(!r.truncated);
    }

    #[test]
    fn knn_short_population_is_flagged() {
        let r = knn(&toy_index(), &[0.0, 0.0], 10, TaskKind::EtrRewrite, None).unwrap();
        assert_eq!(r.neighbors.len(), 3);
        assert!(r.truncated);
        let r = knn(&toy_index(), &[0.0, 0.0], 2, TaskKind::Summarization, None).unwrap();
        assert!(r.neighbors.is_empty() && r.truncated);
    }

    #[test]
    fn knn_ties_and_exclusion() {
        let e = |id: &str| IndexEntry { id: id.into(), task: TaskKind::EtrRewrite, vector: vec![1.0] };
        let idx = EmbeddingIndex::new(1, vec![e("z"), e("m"), e("b")]).unwrap();
        let r = knn(&idx, &[0.0], 2, TaskKind::EtrRewrite, Some("b")).unwrap();
        let ids: Vec<_> = r.neighbors.iter().map(|n| n.id.as_str()).collect();
        assert_eq!(ids, ["m", "z"]);
        assert!(knn(&idx, &[0.0, 1.0], 1, TaskKind::EtrRewrite, None).is_err());
        assert!(matches!(knn(&idx, &[0.0], 0, TaskKind::EtrRewrite, None), Err(RetrievalError::ZeroK)));
    }

    #[test]
    fn build_index_from_mock() {
        let m = MockEmbedding::new(6);
        let p = [
            pair("1", TaskKind::EtrRewrite, "le chat"),
            pair("2", TaskKind::EtrRewrite, "le chat"),
            pair("3", TaskKind::Summarization, "un chien"),
        ];
        let refs: Vec<&TextPair> = p.iter().collect();
        let idx = build_index(&refs, &m).unwrap();
        assert_eq!((idx.len(), idx.dim()), (3, 6));
        assert_eq!(idx.entries()[0].vector, idx.entries()[1].vector);
        let dup = [p[0].clone(), p[0].clone()];
        let refs: Vec<&TextPair> = dup.iter().collect();
        assert!(matches!(build_index(&refs, &m), Err(RetrievalError::DuplicateId(_))));
        assert!(matches!(build_index(&[], &m), Err(RetrievalError::EmptyPool)));
    }

    #[test]
    fn index_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("index.json");
        let idx = toy_index();
        idx.save(&path).unwrap();
        assert_eq!(EmbeddingIndex::load(&path).unwrap(), idx);
    }

    fn buckets(tasks: &[TaskKind], k: usize) -> BTreeMap<TaskKind, Vec<TextPair>> {
        tasks
            .iter()
            .map(|&t| (t, (0..k).map(|i| pair(&format!("{t}{i}"), t, "x")).collect()))
            .collect()
    }

    fn config(tasks: Vec<TaskKind>, ordering: DemoOrdering, seed: u64) -> RetrievalConfig {
        RetrievalConfig { shots_per_task: 3, tasks, ordering, seed, pool_split: Split::Train }
    }

    #[test]
    fn single_task_orders_are_identity() {
        let tasks = vec![TaskKind::Summarization];
        let b = buckets(&tasks, 3);
        for o in [DemoOrdering::Grouped, DemoOrdering::Interleaved] {
            let out = order_demonstrations(&b, &config(tasks.clone(), o, 0)).unwrap();
            let ids: Vec<_> = out.iter().map(|(_, p)| p.id.as_str()).collect();
            assert_eq!(ids, ["O0", "O1", "O2"]);
        }
    }

    #[test]
    fn missing_bucket_and_bad_config() {
        let b = buckets(&[TaskKind::EtrRewrite], 3);
        let cfg = config(vec![TaskKind::EtrRewrite, TaskKind::Simplification], DemoOrdering::Grouped, 0);
        assert!(matches!(order_demonstrations(&b, &cfg), Err(RetrievalError::MissingTask(TaskKind::Simplification))));
        let dup = config(vec![TaskKind::EtrRewrite, TaskKind::EtrRewrite], DemoOrdering::Grouped, 0);
        assert!(order_demonstrations(&b, &dup).is_err());
    }

    #[test]
    fn render_contract() {
        let plan = render_prompt(PromptTemplate::ZeroShot, vec![], "X", "Rewrite…").unwrap();
        assert_eq!(plan.rendered.matches(INPUT_MARKER).count(), 1);
        assert!(plan.rendered.ends_with("<Input>\nX\n<Output>\n"));

        let demos = vec![
            (TaskKind::EtrRewrite, pair("d1", TaskKind::EtrRewrite, "premier texte")),
            (TaskKind::Simplification, pair("d2", TaskKind::Simplification, "second texte")),
        ];
        let plan = render_prompt(PromptTemplate::FewShot, demos.clone(), "cible", "Rewrite").unwrap();
        let r = &plan.rendered;
        let first = r.find("premier texte").unwrap();
        let second = r.find("second texte").unwrap();
        let target = r.rfind("cible").unwrap();
        assert!(first < second && second < target);
        assert!(r.contains("Task: W\n"));
        assert_eq!(r.matches(INPUT_MARKER).count(), 3);

        let again = render_prompt(PromptTemplate::FewShot, demos.clone(), "cible", "Rewrite").unwrap();
        assert_eq!(plan.rendered.as_bytes(), again.rendered.as_bytes());

        assert!(matches!(
            render_prompt(PromptTemplate::FewShot, vec![], "x", "i"),
            Err(RetrievalError::NoDemonstrations)
        ));
        assert!(render_prompt(PromptTemplate::Cot, demos, "x", "i").is_err());
        let cot = render_prompt(PromptTemplate::Cot, vec![], "x", "i").unwrap();
        assert!(cot.rendered.contains("step by step"));
    }

    #[test]
    fn retriever_excludes_query_pair() {
        let pairs = vec![
            pair("e1", TaskKind::EtrRewrite, "le chat dort sur le lit"),
            pair("e2", TaskKind::EtrRewrite, "le chat mange"),
            pair("e3", TaskKind::EtrRewrite, "la voiture roule vite"),
            pair("w1", TaskKind::Simplification, "le chien dort"),
        ];
        let corpus = Corpus::from_pairs(pairs).unwrap();
        let m = MockEmbedding::default();
        let cfg = RetrievalConfig {
            shots_per_task: 1,
            tasks: vec![TaskKind::EtrRewrite, TaskKind::Simplification],
            ordering: DemoOrdering::Interleaved,
            seed: 0,
            pool_split: Split::Train,
        };
        let r = Retriever::build(&corpus, cfg, &m).unwrap();
        let demos = r.demonstrations("le chat dort sur le lit", Some("e1"), &m).unwrap();
        let ids: Vec<_> = demos.iter().map(|(_, p)| p.id.as_str()).collect();
        assert_eq!(ids.len(), 2);
        assert_ne!(ids[0], "e1");
        assert_eq!(ids[1], "w1");
    }
}
