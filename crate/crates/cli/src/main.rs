use std::collections::BTreeMap;
use std::fs;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use etr_core::corpus::{corpus_stats, load_corpus, stats_csv, stats_markdown, Corpus};
use etr_core::evalharness::{self, AggregateReport, ReportFormat};
use etr_core::genpipe::{self, ExperimentSpec, GenerationConfig, HttpLlm, LlmBackend, Method, MockLlm, MockMode};
use etr_core::metrics::embedding::HttpEmbedding;
use etr_core::retrieval::{self, DemoOrdering, PromptTemplate, RetrievalConfig, Retriever};
use etr_core::textstats::StopwordList;
use etr_core::{EmbeddingBackend, MockEmbedding, Split, TaskKind};
use serde::Deserialize;

#[derive(Parser)]
#[command(name = "etr-bench", version, about = "Easy-to-read generation benchmark toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum TableFormat {
    Markdown,
    Csv,
}

#[derive(Subcommand)]
enum Command {
    /// Descriptive statistics of a JSONL corpus.
    Stats {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        task: Option<TaskKind>,
        #[arg(long)]
        split: Option<Split>,
        #[arg(long, value_enum, default_value = "markdown")]
        format: TableFormat,
    },
    /// Render one prompt from a TOML configuration.
    Prompt {
        #[arg(long)]
        config: PathBuf,
        /// Input text, or a path to a file holding it.
        #[arg(long)]
        input: String,
    },
    /// Generate outputs for every (seed, evaluation pair).
    Run {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, default_value = "test")]
        split: Split,
        #[arg(long, default_value = "E")]
        eval_task: TaskKind,
        #[arg(long, default_value = "zeroshot")]
        method: Method,
        /// Demonstration tasks for rag, comma separated.
        #[arg(long, value_delimiter = ',', default_value = "E")]
        tasks: Vec<TaskKind>,
        #[arg(long, default_value_t = 3)]
        k: usize,
        #[arg(long, default_value = "grouped")]
        ordering: DemoOrdering,
        #[arg(long, default_value_t = 0)]
        retrieval_seed: u64,
        /// Completion endpoint URL, or `mock` / `mock:echo`.
        #[arg(long)]
        backend_url: String,
        /// Embedding service base URL for rag, or `mock` / `mock:<dim>`.
        #[arg(long, default_value = "mock")]
        embed_url: String,
        #[arg(long, value_delimiter = ',', default_value = "1,2,3,4,5")]
        seeds: Vec<u64>,
        #[arg(long, default_value = "mock")]
        model: String,
        #[arg(long, default_value_t = 0.7)]
        temperature: f64,
        #[arg(long, default_value_t = 0.9)]
        top_p: f64,
        #[arg(long, default_value_t = 512)]
        max_new_tokens: u32,
        /// Maximum concurrent backend requests.
        #[arg(long, default_value_t = 4)]
        concurrency: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a run directory and write per-seed and aggregate reports.
    Evaluate {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        /// Embedding service base URL, or `mock` / `mock:<dim>`.
        #[arg(long, default_value = "mock")]
        backend_url: String,
        /// Output directory; defaults to `<run>/report`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the configuration with the highest mean SRB.
    Select {
        /// Glob matching aggregate.json files written by `evaluate`.
        #[arg(long)]
        reports: String,
    },
    /// Serve the human-evaluation API.
    ServeAnno {
        /// Directory of sample JSONL files.
        #[arg(long)]
        samples: PathBuf,
        /// File with one annotator id per line.
        #[arg(long)]
        annotators: PathBuf,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        /// Samples per annotator; defaults to |samples| / |annotators|.
        #[arg(long)]
        per_annotator: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Annotation store; defaults to `<samples>/annotations`.
        #[arg(long)]
        state: Option<PathBuf>,
    },
    /// Train the toy MTL-LoRA problem over the learning-rate grid.
    ToyTrain {
        #[arg(long, default_value_t = 20)]
        epochs: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn embedder(url: &str) -> Result<Box<dyn EmbeddingBackend>> {
    if url == "mock" {
        return Ok(Box::new(MockEmbedding::default()));
    }
    if let Some(dim) = url.strip_prefix("mock:") {
        let dim: usize = dim.parse().context("mock embedding dimension")?;
        if dim == 0 {
            bail!("mock embedding dimension must be positive");
        }
        return Ok(Box::new(MockEmbedding::new(dim)));
    }
    Ok(Box::new(HttpEmbedding::new(url)))
}

fn llm(url: &str) -> Box<dyn LlmBackend> {
    match url {
        "mock" => Box::new(MockLlm::new(MockMode::Extractive)),
        "mock:echo" => Box::new(MockLlm::new(MockMode::Echo)),
        _ => Box::new(HttpLlm::from_env(url)),
    }
}

fn stats(corpus: &Path, task: Option<TaskKind>, split: Option<Split>, format: TableFormat) -> Result<()> {
    let corpus = load_corpus(corpus)?;
    let stopwords = StopwordList::french();
    let tasks: Vec<TaskKind> = match task {
        Some(t) => vec![t],
        None => TaskKind::ALL.into_iter().filter(|t| corpus.pairs().iter().any(|p| p.task == *t)).collect(),
    };
    let mut rows = Vec::new();
    for t in tasks {
        let pairs: Vec<_> = corpus
            .pairs()
            .iter()
            .filter(|p| p.task == t && split.is_none_or(|s| p.split == s))
            .collect();
        if pairs.is_empty() {
            continue;
        }
        let label = format!("{t}/{}", split.map_or("all", Split::as_str));
        rows.push((label, corpus_stats(&pairs, &stopwords)?));
    }
    if rows.is_empty() {
        bail!("no pairs match the selection");
    }
    print!(
        "{}",
        match format {
            TableFormat::Markdown => stats_markdown(&rows),
            TableFormat::Csv => stats_csv(&rows),
        }
    );
    Ok(())
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct PromptConfig {
    template: PromptTemplate,
    #[serde(default = "default_task")]
    task: TaskKind,
    instruction: Option<String>,
    /// Demonstration corpus, relative to the config file.
    corpus: Option<PathBuf>,
    #[serde(default = "default_embedding")]
    embedding: String,
    retrieval: Option<RetrievalConfig>,
}

fn default_task() -> TaskKind {
    TaskKind::EtrRewrite
}

fn default_embedding() -> String {
    "mock".into()
}

fn prompt(config_path: &Path, input: &str) -> Result<()> {
    let text = fs::read_to_string(config_path).with_context(|| format!("reading {}", config_path.display()))?;
    let config: PromptConfig = toml::from_str(&text).with_context(|| format!("parsing {}", config_path.display()))?;
    let input = match Path::new(input).is_file() {
        true => fs::read_to_string(input)?,
        false => input.to_string(),
    };
    let instruction = config.instruction.as_deref().unwrap_or(retrieval::task_instruction(config.task));
    let demonstrations = match config.template {
        PromptTemplate::FewShot => {
            let (Some(corpus), Some(rc)) = (&config.corpus, config.retrieval.clone()) else {
                bail!("fewshot prompts need `corpus` and a [retrieval] table");
            };
            let base = config_path.parent().unwrap_or(Path::new("."));
            let corpus = load_corpus(base.join(corpus))?;
            let backend = embedder(&config.embedding)?;
            let retriever = Retriever::build(&corpus, rc, &*backend)?;
            retriever.demonstrations(&input, None, &*backend)?
        }
        _ => Vec::new(),
    };
    let plan = retrieval::render_prompt(config.template, demonstrations, &input, instruction)?;
    print!("{}", plan.rendered);
    Ok(())
}

fn load(path: &Path) -> Result<Corpus> {
    load_corpus(path).with_context(|| format!("loading corpus {}", path.display()))
}

fn run(
    corpus_path: &Path,
    spec: ExperimentSpec,
    backend_url: &str,
    embed_url: &str,
    out: &Path,
) -> Result<ExitCode> {
    let corpus = load(corpus_path)?;
    let backend = llm(backend_url);
    let embed = embedder(embed_url)?;
    let store = genpipe::RecordStore::open(genpipe::cache_dir(out))?;
    let outcome = genpipe::run_experiment(&corpus, &spec, &*backend, Some(&*embed), &store)?;
    genpipe::write_run(out, &spec, Some(&corpus_path.to_string_lossy()), &outcome)?;
    let total: usize = outcome.records.values().map(Vec::len).sum();
    eprintln!(
        "{}: {total} records ({} generated, {} cached), {} failures",
        spec.descriptor(),
        outcome.backend_calls,
        outcome.cache_hits,
        outcome.failures.len()
    );
    for f in &outcome.failures {
        eprintln!("failed seed={} pair={}: {}", f.seed, f.pair_id, f.error);
    }
    Ok(if outcome.failures.is_empty() { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}

fn evaluate(run_dir: &Path, corpus_path: &Path, backend_url: &str, out: Option<PathBuf>) -> Result<()> {
    let corpus = load(corpus_path)?;
    let backend = embedder(backend_url)?;
    let stopwords = StopwordList::french();
    let (manifest, by_seed) = genpipe::read_run(run_dir)?;
    let out = out.unwrap_or_else(|| run_dir.join("report"));
    fs::create_dir_all(&out)?;
    let mut reports = Vec::new();
    for (seed, records) in &by_seed {
        let report =
            evalharness::evaluate_run(&manifest.descriptor, *seed, records, &corpus, &*backend, &stopwords)?;
        fs::write(out.join(format!("seed-{seed}.json")), serde_json::to_string_pretty(&report)? + "\n")?;
        reports.push(report);
    }
    let aggregate = evalharness::aggregate_seeds(&reports)?;
    fs::write(out.join("aggregate.json"), serde_json::to_string_pretty(&aggregate)? + "\n")?;
    let rows = std::slice::from_ref(&aggregate);
    fs::write(out.join("report.csv"), evalharness::render_report(rows, ReportFormat::Csv))?;
    let markdown = evalharness::render_report(rows, ReportFormat::Markdown);
    fs::write(out.join("report.md"), &markdown)?;
    print!("{markdown}");
    Ok(())
}

fn select(pattern: &str) -> Result<()> {
    let mut candidates: BTreeMap<String, AggregateReport> = BTreeMap::new();
    for entry in glob::glob(pattern).context("invalid glob")? {
        let path = entry?;
        let report: AggregateReport = serde_json::from_slice(&fs::read(&path)?)
            .with_context(|| format!("reading {}", path.display()))?;
        if let Some(previous) = candidates.insert(report.descriptor.clone(), report) {
            bail!("configuration {:?} appears in more than one report", previous.descriptor);
        }
    }
    println!("{}", evalharness::select_best(&candidates)?);
    Ok(())
}

fn serve_anno(
    samples_dir: &Path,
    annotators: &Path,
    addr: SocketAddr,
    per_annotator: Option<usize>,
    seed: u64,
    state: Option<PathBuf>,
) -> Result<()> {
    let samples = etr_annoserve::load_samples(samples_dir)?;
    let annotators = etr_annoserve::load_annotators(annotators)?;
    if annotators.is_empty() {
        bail!("no annotators listed");
    }
    let per = per_annotator.unwrap_or((samples.len() / annotators.len()).max(1));
    let allocation = etr_annoserve::create_assignments(&samples, &annotators, per, seed)?;
    let state_dir = state.unwrap_or_else(|| samples_dir.join("annotations"));
    let app = etr_annoserve::AppState::persistent(&samples, allocation, &state_dir)?;
    eprintln!(
        "serving {} samples to {} annotators ({per} each) on http://{addr}, state in {}",
        samples.len(),
        annotators.len(),
        state_dir.display()
    );
    tokio::runtime::Runtime::new()?.block_on(etr_annoserve::server::serve(app, addr))?;
    Ok(())
}

fn toy_train(epochs: usize, seed: u64) -> Result<()> {
    let config = etr_core::adapters::trainer::ToyConfig { epochs, seed, ..Default::default() };
    let report = etr_core::adapters::trainer::run_toy_training(&config)?;
    println!("| lr | initial loss | final loss |");
    println!("|---:|---:|---:|");
    for run in &report.runs {
        println!(
            "| {} | {:.4} | {:.4} |",
            run.lr,
            run.losses.first().copied().unwrap_or(f64::NAN),
            run.losses.last().copied().unwrap_or(f64::NAN)
        );
    }
    println!(
        "best lr {} (held-out loss {:.4})",
        report.runs[report.best].lr, report.best_heldout_loss
    );
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Stats { corpus, task, split, format } => stats(&corpus, task, split, format).map(|_| ExitCode::SUCCESS),
        Command::Prompt { config, input } => prompt(&config, &input).map(|_| ExitCode::SUCCESS),
        Command::Run {
            corpus,
            split,
            eval_task,
            method,
            tasks,
            k,
            ordering,
            retrieval_seed,
            backend_url,
            embed_url,
            seeds,
            model,
            temperature,
            top_p,
            max_new_tokens,
            concurrency,
            out,
        } => {
            let spec = ExperimentSpec {
                method,
                eval_task,
                split,
                retrieval: (method == Method::Rag).then(|| RetrievalConfig {
                    shots_per_task: k,
                    tasks,
                    ordering,
                    seed: retrieval_seed,
                    pool_split: Split::Train,
                }),
                generation: GenerationConfig { model, temperature, top_p, max_new_tokens, seed: 0 },
                seeds,
                max_in_flight: concurrency,
                retry: None,
            };
            run(&corpus, spec, &backend_url, &embed_url, &out)
        }
        Command::Evaluate { run, corpus, backend_url, out } => {
            evaluate(&run, &corpus, &backend_url, out).map(|_| ExitCode::SUCCESS)
        }
        Command::Select { reports } => select(&reports).map(|_| ExitCode::SUCCESS),
        Command::ServeAnno { samples, annotators, port, host, per_annotator, seed, state } => {
            match format!("{host}:{port}").parse() {
                Ok(addr) => serve_anno(&samples, &annotators, addr, per_annotator, seed, state).map(|_| ExitCode::SUCCESS),
                Err(e) => Err(anyhow::anyhow!("bad address {host}:{port}: {e}")),
            }
        }
        Command::ToyTrain { epochs, seed } => toy_train(epochs, seed).map(|_| ExitCode::SUCCESS),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
