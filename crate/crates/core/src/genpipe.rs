//! Generation runs against an external completion backend.
//!
//! Every request is keyed by the SHA-256 of the canonical JSON of
//! `{"prompt", "config"}`. Records live in a content-addressed directory
//! (`<cache>/<hash>.json`), are written atomically and never replaced, so an
//! interrupted run resumes without repeating backend calls.
//!
//! Run directory layout written by [`write_run`]:
//!
//! ```text
//! <out>/run.json                 RunManifest
//! <out>/records/seed-<s>.jsonl   GenerationRecord per line, sorted by pair id
//! <out>/cache/<hash>.json        GenerationRecord cache
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::thread;
use std::time::Duration;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::corpus::{Corpus, Split, TaskKind, TextPair};
use crate::metrics::embedding::EmbeddingBackend;
use crate::retrieval::{self, PromptTemplate, RetrievalConfig, RetrievalError, Retriever};

pub const RECORD_FORMAT_VERSION: u32 = 1;
/// Environment variable holding the backend bearer token.
pub const TOKEN_ENV: &str = "ETR_BACKEND_TOKEN";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LlmError {
    #[error("transport: {0}")]
    Transport(String),
    #[error("HTTP {status}: {body}")]
    Http { status: u16, body: String },
    #[error("malformed response: {0}")]
    Protocol(String),
}

impl LlmError {
    fn retryable(&self) -> bool {
        match self {
            LlmError::Transport(_) => true,
            LlmError::Http { status, .. } => *status == 429 || *status >= 500,
            LlmError::Protocol(_) => false,
        }
    }
}

#[derive(Debug, Error)]
pub enum GenError {
    #[error("invalid generation config: {0}")]
    Config(String),
    #[error("pair {pair_id}: backend failed after {attempts} attempts: {source}")]
    Backend { pair_id: String, attempts: usize, source: LlmError },
    #[error("cache collision for {hash}: stored record has a different prompt or config")]
    Collision { hash: String },
    #[error("retrieval: {0}")]
    Retrieval(#[from] RetrievalError),
    #[error("no seeds given")]
    NoSeeds,
    #[error("split {split} has no {task} pairs")]
    EmptySplit { task: TaskKind, split: Split },
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, GenError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationConfig {
    pub model: String,
    pub temperature: f64,
    pub top_p: f64,
    pub max_new_tokens: u32,
    pub seed: u64,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        Self { model: "mock".into(), temperature: 0.7, top_p: 0.9, max_new_tokens: 512, seed: 0 }
    }
}

impl GenerationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_new_tokens == 0 {
            return Err(GenError::Config("max_new_tokens must be at least 1".into()));
        }
        if !(self.temperature >= 0.0) {
            return Err(GenError::Config("temperature must be >= 0".into()));
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(GenError::Config("top_p must be in (0, 1]".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Completion {
    pub text: String,
    #[serde(default)]
    pub metadata: BTreeMap<String, Value>,
}

/// A text completion service. Implementations must not alter the prompt and
/// must tolerate concurrent calls.
pub trait LlmBackend: Send + Sync {
    fn complete(&self, prompt: &str, config: &GenerationConfig) -> std::result::Result<Completion, LlmError>;
}

impl<B: LlmBackend + ?Sized> LlmBackend for &B {
    fn complete(&self, prompt: &str, config: &GenerationConfig) -> std::result::Result<Completion, LlmError> {
        (**self).complete(prompt, config)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MockMode {
    /// Return the prompt unchanged.
    Echo,
    /// Return a seeded extract of the last `<Input>` section.
    Extractive,
}

/// Offline backend with deterministic outputs and a call counter.
#[derive(Debug)]
pub struct MockLlm {
    mode: MockMode,
    calls: AtomicUsize,
}

impl MockLlm {
    pub fn new(mode: MockMode) -> Self {
        Self { mode, calls: AtomicUsize::new(0) }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

fn mix(mut h: u64, v: u64) -> u64 {
    h ^= v.wrapping_add(0x9e37_79b9_7f4a_7c15).wrapping_add(h << 6).wrapping_add(h >> 2);
    h
}

/// Text between the last input marker and the following output marker.
pub fn last_input_section(prompt: &str) -> &str {
    let start = prompt
        .rfind(retrieval::INPUT_MARKER)
        .map(|i| i + retrieval::INPUT_MARKER.len())
        .unwrap_or(0);
    let rest = &prompt[start..];
    let end = rest.find(retrieval::OUTPUT_MARKER).unwrap_or(rest.len());
    rest[..end].trim()
}

fn extract(input: &str, seed: u64) -> String {
    let tokens = match crate::textstats::tokenize(input) {
        Ok(t) => t,
        Err(_) => return String::new(),
    };
    let mut kept = Vec::new();
    for (i, span) in tokens.sentences.iter().enumerate() {
        let h = mix(mix(seed, i as u64), span.len() as u64);
        if h % 5 < 3 || (i + 1 == tokens.sentences.len() && kept.is_empty()) {
            let take = span.len().min(8 + (h % 5) as usize);
            let words = &tokens.words[span.start..span.start + take];
            kept.push(format!("{}.", words.join(" ")));
        }
    }
    kept.join(" ")
}

impl LlmBackend for MockLlm {
    fn complete(&self, prompt: &str, config: &GenerationConfig) -> std::result::Result<Completion, LlmError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let text = match self.mode {
            MockMode::Echo => prompt.to_string(),
            MockMode::Extractive => extract(last_input_section(prompt), config.seed),
        };
        let mut metadata = BTreeMap::new();
        metadata.insert("backend".into(), Value::from("mock"));
        Ok(Completion { text, metadata })
    }
}

#[derive(Serialize)]
struct ChatMessage<'a> {
    role: &'static str,
    content: &'a str,
}

#[derive(Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    messages: Vec<ChatMessage<'a>>,
    temperature: f64,
    top_p: f64,
    max_tokens: u32,
    seed: u64,
}

/// Chat-completions style HTTP client. `endpoint` is the full URL.
pub struct HttpLlm {
    endpoint: String,
    token: Option<String>,
    agent: ureq::Agent,
}

impl HttpLlm {
    pub fn new(endpoint: &str, token: Option<String>) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(300)))
            .http_status_as_error(false)
            .build()
            .into();
        Self { endpoint: endpoint.to_string(), token, agent }
    }

    /// Token from [`TOKEN_ENV`] when set.
    pub fn from_env(endpoint: &str) -> Self {
        Self::new(endpoint, std::env::var(TOKEN_ENV).ok().filter(|t| !t.is_empty()))
    }
}

impl LlmBackend for HttpLlm {
    fn complete(&self, prompt: &str, config: &GenerationConfig) -> std::result::Result<Completion, LlmError> {
        let body = ChatRequest {
            model: &config.model,
            messages: vec![ChatMessage { role: "user", content: prompt }],
            temperature: config.temperature,
            top_p: config.top_p,
            max_tokens: config.max_new_tokens,
            seed: config.seed,
        };
        let mut request = self.agent.post(&self.endpoint);
        if let Some(token) = &self.token {
            request = request.header("Authorization", &format!("Bearer {token}"));
        }
        let mut response = request
            .send_json(&body)
            .map_err(|e| LlmError::Transport(e.to_string()))?;
        let status = response.status().as_u16();
        if status >= 400 {
            let body = response.body_mut().read_to_string().unwrap_or_default();
            return Err(LlmError::Http { status, body });
        }
        let json: Value = response
            .body_mut()
            .read_json()
            .map_err(|e| LlmError::Protocol(e.to_string()))?;
        let text = json
            .pointer("/choices/0/message/content")
            .or_else(|| json.pointer("/choices/0/text"))
            .and_then(Value::as_str)
            .ok_or_else(|| LlmError::Protocol("no choices[0].message.content".into()))?
            .to_string();
        let mut metadata = BTreeMap::new();
        for key in ["usage", "model", "id"] {
            if let Some(v) = json.get(key) {
                metadata.insert(key.to_string(), v.clone());
            }
        }
        Ok(Completion { text, metadata })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRecord {
    pub format_version: u32,
    pub pair_id: String,
    pub prompt_hash: String,
    pub prompt: String,
    pub output: String,
    pub config: GenerationConfig,
    pub timestamp: String,
    #[serde(default)]
    pub backend: BTreeMap<String, Value>,
}

/// Cache key: SHA-256 hex of the canonical `{"prompt", "config"}` JSON.
pub fn prompt_hash(prompt: &str, config: &GenerationConfig) -> String {
    #[derive(Serialize)]
    struct Key<'a> {
        prompt: &'a str,
        config: &'a GenerationConfig,
    }
    let bytes = serde_json::to_vec(&Key { prompt, config }).expect("key serializes");
    Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Content-addressed record directory.
#[derive(Debug, Clone)]
pub struct RecordStore {
    dir: PathBuf,
}

impl RecordStore {
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        Ok(Self { dir })
    }

    fn path(&self, hash: &str) -> PathBuf {
        self.dir.join(format!("{hash}.json"))
    }

    pub fn get(&self, hash: &str) -> Result<Option<GenerationRecord>> {
        match fs::read(self.path(hash)) {
            Ok(bytes) => Ok(Some(serde_json::from_slice(&bytes)?)),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(e.into()),
        }
    }

    /// Store `record` unless a record for the same key exists; returns the
    /// record now on disk. A stored record with a different prompt or config
    /// under the same hash is a collision.
    pub fn put(&self, record: GenerationRecord) -> Result<GenerationRecord> {
        let target = self.path(&record.prompt_hash);
        let mut tmp = tempfile::NamedTempFile::new_in(&self.dir)?;
        serde_json::to_writer_pretty(&mut tmp, &record)?;
        tmp.write_all(b"\n")?;
        tmp.as_file().sync_all()?;
        match tmp.persist_noclobber(&target) {
            Ok(_) => Ok(record),
            Err(e) if e.error.kind() == std::io::ErrorKind::AlreadyExists => {
                let existing = self.get(&record.prompt_hash)?.expect("file exists");
                if existing.prompt != record.prompt || existing.config != record.config {
                    return Err(GenError::Collision { hash: record.prompt_hash });
                }
                Ok(existing)
            }
            Err(e) => Err(e.error.into()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    pub max_attempts: usize,
    pub base_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self { max_attempts: 4, base_delay: Duration::from_millis(500) }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Generated {
    pub record: GenerationRecord,
    pub cached: bool,
}

/// Return the cached record for `(prompt, config)` or call the backend with
/// bounded exponential backoff and persist the result.
pub fn generate<B: LlmBackend + ?Sized>(
    backend: &B,
    store: &RecordStore,
    pair_id: &str,
    prompt: &str,
    config: &GenerationConfig,
    retry: RetryPolicy,
) -> Result<Generated> {
    config.validate()?;
    let hash = prompt_hash(prompt, config);
    if let Some(mut record) = store.get(&hash)? {
        if record.prompt != prompt || record.config != *config {
            return Err(GenError::Collision { hash });
        }
        record.pair_id = pair_id.to_string();
        return Ok(Generated { record, cached: true });
    }

    let attempts = retry.max_attempts.max(1);
    let mut last = None;
    for attempt in 0..attempts {
        if attempt > 0 {
            thread::sleep(retry.base_delay * 2u32.pow(attempt as u32 - 1));
        }
        match backend.complete(prompt, config) {
            Ok(completion) => {
                let record = GenerationRecord {
                    format_version: RECORD_FORMAT_VERSION,
                    pair_id: pair_id.to_string(),
                    prompt_hash: hash,
                    prompt: prompt.to_string(),
                    output: completion.text,
                    config: config.clone(),
                    timestamp: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true),
                    backend: completion.metadata,
                };
                let mut stored = store.put(record)?;
                stored.pair_id = pair_id.to_string();
                return Ok(Generated { record: stored, cached: false });
            }
            Err(e) if e.retryable() => last = Some(e),
            Err(e) => {
                return Err(GenError::Backend { pair_id: pair_id.into(), attempts: attempt + 1, source: e })
            }
        }
    }
    Err(GenError::Backend {
        pair_id: pair_id.into(),
        attempts,
        source: last.expect("at least one attempt"),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    ZeroShot,
    Cot,
    Rag,
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Method::ZeroShot => "zeroshot",
            Method::Cot => "cot",
            Method::Rag => "rag",
        })
    }
}

impl std::str::FromStr for Method {
    type Err = GenError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "zeroshot" | "zero-shot" => Ok(Method::ZeroShot),
            "cot" => Ok(Method::Cot),
            "rag" => Ok(Method::Rag),
            other => Err(GenError::Config(format!("unknown method {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub method: Method,
    /// Task whose split is evaluated; also picks the instruction.
    pub eval_task: TaskKind,
    pub split: Split,
    /// Required for [`Method::Rag`].
    pub retrieval: Option<RetrievalConfig>,
    /// Generation settings; `seed` is replaced per run.
    pub generation: GenerationConfig,
    pub seeds: Vec<u64>,
    pub max_in_flight: usize,
    #[serde(skip)]
    pub retry: Option<RetryPolicy>,
}

impl ExperimentSpec {
    /// Human-readable configuration name used in reports and selection.
    pub fn descriptor(&self) -> String {
        let mut d = format!("{}|task={}|split={}|model={}", self.method, self.eval_task, self.split, self.generation.model);
        if let Some(r) = &self.retrieval {
            let tasks: Vec<&str> = r.tasks.iter().map(|t| t.letter()).collect();
            d.push_str(&format!("|tasks={}|k={}|ordering={}", tasks.join(","), r.shots_per_task, r.ordering));
        }
        d
    }

    fn template(&self) -> PromptTemplate {
        match self.method {
            Method::ZeroShot => PromptTemplate::ZeroShot,
            Method::Cot => PromptTemplate::Cot,
            Method::Rag => PromptTemplate::FewShot,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Failure {
    pub seed: u64,
    pub pair_id: String,
    pub error: String,
}

#[derive(Debug, Clone, Default)]
pub struct RunOutcome {
    /// Per seed, records sorted by pair id.
    pub records: BTreeMap<u64, Vec<GenerationRecord>>,
    pub failures: Vec<Failure>,
    pub backend_calls: usize,
    pub cache_hits: usize,
}

/// Render one prompt per evaluation pair.
pub fn build_prompts<E: EmbeddingBackend + ?Sized>(
    corpus: &Corpus,
    spec: &ExperimentSpec,
    embedder: Option<&E>,
) -> Result<Vec<(String, String)>> {
    let pairs = corpus.split_view(spec.eval_task, spec.split);
    if pairs.is_empty() {
        return Err(GenError::EmptySplit { task: spec.eval_task, split: spec.split });
    }
    let instruction = retrieval::task_instruction(spec.eval_task);
    let retriever = match (spec.method, &spec.retrieval, embedder) {
        (Method::Rag, Some(cfg), Some(e)) => Some(Retriever::build(corpus, cfg.clone(), e)?),
        (Method::Rag, None, _) => return Err(GenError::Config("rag needs a retrieval config".into())),
        (Method::Rag, _, None) => return Err(GenError::Config("rag needs an embedding backend".into())),
        _ => None,
    };
    pairs
        .iter()
        .map(|p: &&TextPair| {
            let demos = match (&retriever, embedder) {
                (Some(r), Some(e)) => r.demonstrations(&p.source, Some(&p.id), e)?,
                _ => Vec::new(),
            };
            let plan = retrieval::render_prompt(spec.template(), demos, &p.source, instruction)?;
            Ok((p.id.clone(), plan.rendered))
        })
        .collect()
}

/// Generate every (seed, evaluation pair) combination, resuming from `store`.
/// Failed items are reported in the outcome; completed ones stay cached.
pub fn run_experiment<B: LlmBackend + ?Sized, E: EmbeddingBackend + ?Sized>(
    corpus: &Corpus,
    spec: &ExperimentSpec,
    backend: &B,
    embedder: Option<&E>,
    store: &RecordStore,
) -> Result<RunOutcome> {
    if spec.seeds.is_empty() {
        return Err(GenError::NoSeeds);
    }
    spec.generation.validate()?;
    let prompts = build_prompts(corpus, spec, embedder)?;
    let jobs: Vec<(u64, &str, &str)> = spec
        .seeds
        .iter()
        .flat_map(|&s| prompts.iter().map(move |(id, p)| (s, id.as_str(), p.as_str())))
        .collect();

    let retry = spec.retry.unwrap_or_default();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(spec.max_in_flight.max(1))
        .build()
        .map_err(|e| GenError::Config(e.to_string()))?;
    let results: Vec<(u64, String, Result<Generated>)> = pool.install(|| {
        jobs.par_iter()
            .map(|&(seed, id, prompt)| {
                let config = GenerationConfig { seed, ..spec.generation.clone() };
                (seed, id.to_string(), generate(backend, store, id, prompt, &config, retry))
            })
            .collect()
    });

    let mut outcome = RunOutcome::default();
    for &s in &spec.seeds {
        outcome.records.entry(s).or_default();
    }
    for (seed, pair_id, result) in results {
        match result {
            Ok(g) => {
                if g.cached {
                    outcome.cache_hits += 1;
                } else {
                    outcome.backend_calls += 1;
                }
                outcome.records.entry(seed).or_default().push(g.record);
            }
            Err(e) => outcome.failures.push(Failure { seed, pair_id, error: e.to_string() }),
        }
    }
    for records in outcome.records.values_mut() {
        records.sort_by(|a, b| a.pair_id.cmp(&b.pair_id));
    }
    Ok(outcome)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub format_version: u32,
    pub descriptor: String,
    pub spec: ExperimentSpec,
    pub corpus: Option<String>,
}

pub fn cache_dir(run_dir: &Path) -> PathBuf {
    run_dir.join("cache")
}

fn seed_file(run_dir: &Path, seed: u64) -> PathBuf {
    run_dir.join("records").join(format!("seed-{seed}.jsonl"))
}

/// Persist the manifest and per-seed record files.
pub fn write_run(run_dir: &Path, spec: &ExperimentSpec, corpus_path: Option<&str>, outcome: &RunOutcome) -> Result<()> {
    fs::create_dir_all(run_dir.join("records"))?;
    let manifest = RunManifest {
        format_version: RECORD_FORMAT_VERSION,
        descriptor: spec.descriptor(),
        spec: spec.clone(),
        corpus: corpus_path.map(str::to_string),
    };
    fs::write(run_dir.join("run.json"), serde_json::to_string_pretty(&manifest)? + "\n")?;
    for (seed, records) in &outcome.records {
        let mut text = String::new();
        for r in records {
            text.push_str(&serde_json::to_string(r)?);
            text.push('\n');
        }
        fs::write(seed_file(run_dir, *seed), text)?;
    }
    Ok(())
}

pub fn read_run(run_dir: &Path) -> Result<(RunManifest, BTreeMap<u64, Vec<GenerationRecord>>)> {
    let manifest: RunManifest = serde_json::from_slice(&fs::read(run_dir.join("run.json"))?)?;
    let mut by_seed = BTreeMap::new();
    for &seed in &manifest.spec.seeds {
        let text = fs::read_to_string(seed_file(run_dir, seed))?;
        let records = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(serde_json::from_str)
            .collect::<std::result::Result<Vec<GenerationRecord>, _>>()?;
        by_seed.insert(seed, records);
    }
    Ok((manifest, by_seed))
}
