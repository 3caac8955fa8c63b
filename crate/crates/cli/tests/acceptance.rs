//! Acceptance gate. Runs every primary criterion and prints one PASS/FAIL
//! line each; exits non-zero if any criterion fails.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use etr_annoserve::{aggregate_rubric, create_assignments, Answer, BinaryAnswer, RubricAnnotation, Sample, Scale, RUBRIC};
use etr_core::adapters::{mtl_loss, AdapterLayer, LoraLayer, Matrix, MtlLoraLayer, TaskWeights};
use etr_core::adapters::grad_check;
use etr_core::corpus::parse_jsonl;
use etr_core::evalharness::evaluate_run;
use etr_core::genpipe::{GenerationConfig, GenerationRecord, RECORD_FORMAT_VERSION};
use etr_core::metrics::rouge::rouge_l_tokens;
use etr_core::metrics::sari::sari_tokens;
use etr_core::metrics::srb;
use etr_core::retrieval::{knn, order_demonstrations, DemoOrdering, EmbeddingIndex, IndexEntry, RetrievalConfig};
use etr_core::rng::SeededRng;
use etr_core::textstats::{kmre, novelty_unigrams, StopwordList};
use etr_core::{MockEmbedding, Split, TaskKind, TextPair};

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

// ---------------------------------------------------------------- metrics

fn srb_table_rows() -> Outcome {
    let rows = [
        ((44.67, 25.01, 74.05), 39.54),
        ((42.09, 23.99, 73.56), 37.95),
        ((37.07, 16.25, 69.75), 29.17),
    ];
    let mut worst = Duration::ZERO;
    for ((s, r, b), expected) in rows {
        let start = Instant::now();
        let value = srb(s, r, b).map_err(|e| e.to_string())?.value;
        let elapsed = start.elapsed();
        worst = worst.max(elapsed);
        ensure((value - expected).abs() <= 0.01, || format!("srb({s}, {r}, {b}) = {value}, expected {expected}"))?;
        ensure(elapsed < Duration::from_millis(1), || format!("srb({s}, {r}, {b}) took {elapsed:?}"))?;
    }
    Ok(format!("3 rows within 0.01, slowest {worst:?}"))
}

const WORDS: [&str; 24] = [
    "le", "chat", "dort", "sur", "la", "table", "maison", "enfant", "mange", "une", "pomme", "rouge", "ville",
    "parc", "ouvre", "demain", "école", "ferme", "lundi", "médecin", "rendez-vous", "train", "arrive", "tard",
];

fn sentence(rng: &mut SeededRng, min: usize, max: usize) -> String {
    let n = min + rng.below((max - min + 1) as u64) as usize;
    let words: Vec<&str> = (0..n).map(|_| WORDS[rng.below(WORDS.len() as u64) as usize]).collect();
    let mut s = words.join(" ");
    if let Some(first) = s.get(..1) {
        s = first.to_uppercase() + &s[1..];
    }
    s + "."
}

fn text(rng: &mut SeededRng, sentences: usize) -> String {
    (0..sentences).map(|_| sentence(rng, 3, 9)).collect::<Vec<_>>().join(" ")
}

fn synthetic_pairs(rng: &mut SeededRng, prefix: &str, task: TaskKind, split: Split, n: usize) -> Vec<TextPair> {
    (0..n)
        .map(|i| TextPair {
            id: format!("{prefix}-{i:03}"),
            task,
            split,
            source: text(rng, 3),
            target: text(rng, 2),
            meta: Default::default(),
        })
        .collect()
}

fn metric_identity() -> Outcome {
    let mut rng = SeededRng::new(20);
    let pairs = synthetic_pairs(&mut rng, "id", TaskKind::EtrRewrite, Split::Test, 20);
    let corpus = etr_core::Corpus::from_pairs(pairs.clone()).map_err(|e| e.to_string())?;
    let records: Vec<GenerationRecord> = pairs
        .iter()
        .map(|p| GenerationRecord {
            format_version: RECORD_FORMAT_VERSION,
            pair_id: p.id.clone(),
            prompt_hash: String::new(),
            prompt: String::new(),
            output: p.target.clone(),
            config: GenerationConfig::default(),
            timestamp: String::new(),
            backend: Default::default(),
        })
        .collect();
    let stopwords = StopwordList::french();
    let report = evaluate_run("identity", 0, &records, &corpus, &MockEmbedding::default(), &stopwords)
        .map_err(|e| e.to_string())?;
    ensure(report.rows.len() == 20, || format!("{} rows", report.rows.len()))?;
    for row in &report.rows {
        for (name, v) in [("R-1", row.rouge1), ("R-2", row.rouge2), ("R-L", row.rouge_l), ("BERT-F1", row.bert_f1)] {
            ensure(v == 100.0, || format!("{}: {name} = {v}", row.id))?;
        }
    }
    let m = report.means;
    ensure(m.rouge1 == 100.0 && m.rouge2 == 100.0 && m.rouge_l == 100.0 && m.bert_f1 == 100.0, || {
        format!("means {m:?}")
    })?;
    for p in &pairs {
        let n = novelty_unigrams(&p.target, &p.target, &stopwords).map_err(|e| e.to_string())?;
        ensure(n == 0.0, || format!("{}: novelty {n}", p.id))?;
    }
    Ok("20 pairs, R-1/R-2/R-L/BERT-F1 = 100.00, novelty 0".into())
}

/// Every sequence over `vocab` of length 1..=max_len.
fn all_sequences(vocab: &[&'static str], max_len: usize) -> Vec<Vec<&'static str>> {
    let mut out: Vec<Vec<&str>> = Vec::new();
    let mut layer: Vec<Vec<&str>> = vec![vec![]];
    for _ in 0..max_len {
        layer = layer
            .iter()
            .flat_map(|prefix| {
                vocab.iter().map(move |w| {
                    let mut s = prefix.clone();
                    s.push(*w);
                    s
                })
            })
            .collect();
        out.extend(layer.iter().cloned());
    }
    out
}

fn contains_ngram(text: &[&str], gram: &[&str]) -> bool {
    text.len() >= gram.len() && (0..=text.len() - gram.len()).any(|i| &text[i..i + gram.len()] == gram)
}

fn oracle_f1(correct: usize, decisions: usize, target: usize) -> f64 {
    if decisions == 0 && target == 0 {
        return 1.0;
    }
    if decisions == 0 || target == 0 {
        return 0.0;
    }
    let p = correct as f64 / decisions as f64;
    let r = correct as f64 / target as f64;
    if p + r > 0.0 {
        2.0 * p * r / (p + r)
    } else {
        0.0
    }
}

/// SARI straight from the set definitions: every n-gram of the vocabulary
/// universe is classified by membership in source, hypothesis and reference.
fn sari_oracle(universe: &[Vec<Vec<&'static str>>], s: &[&str], h: &[&str], r: &[&str]) -> [f64; 4] {
    let (mut keep, mut add, mut del, mut orders) = (0.0, 0.0, 0.0, 0usize);
    for grams in universe {
        let (mut kc, mut kd, mut kt) = (0, 0, 0);
        let (mut ac, mut ad, mut at) = (0, 0, 0);
        let (mut dc, mut dd, mut dt) = (0, 0, 0);
        let mut active = false;
        for g in grams {
            let (ins, inh, inr) = (contains_ngram(s, g), contains_ngram(h, g), contains_ngram(r, g));
            active |= ins || inh || inr;
            // keep: target S∩R, decisions H∩S
            kt += (ins && inr) as usize;
            kd += (inh && ins) as usize;
            kc += (inh && ins && inr) as usize;
            // add: target R∖S, decisions H∖S
            at += (inr && !ins) as usize;
            ad += (inh && !ins) as usize;
            ac += (inh && !ins && inr) as usize;
            // delete: target S∖R, decisions S∖H
            dt += (ins && !inr) as usize;
            dd += (ins && !inh) as usize;
            dc += (ins && !inh && !inr) as usize;
        }
        if !active {
            continue;
        }
        orders += 1;
        keep += oracle_f1(kc, kd, kt);
        add += oracle_f1(ac, ad, at);
        del += oracle_f1(dc, dd, dt);
    }
    let o = orders as f64;
    let (k, a, d) = (100.0 * keep / o, 100.0 * add / o, 100.0 * del / o);
    [k, a, d, (k + a + d) / 3.0]
}

fn sari_exhaustive() -> Outcome {
    let start = Instant::now();
    let vocab = ["a", "b", "c"];
    let texts = all_sequences(&vocab, 3);
    let universe: Vec<Vec<Vec<&str>>> = (1..=4)
        .map(|n| all_sequences(&vocab, n).into_iter().filter(|g| g.len() == n).collect())
        .collect();
    let mut cases = 0usize;
    for s in &texts {
        for r in &texts {
            let refs = vec![r.clone()];
            for h in &texts {
                let got = sari_tokens(s, h, &refs);
                let want = sari_oracle(&universe, s, h, r);
                let got = [got.f_keep, got.f_add, got.f_del, got.sari];
                ensure(got == want, || format!("source {s:?} ref {r:?} hyp {h:?}: {got:?} != {want:?}"))?;
                cases += 1;
            }
        }
    }
    let elapsed = start.elapsed();
    ensure(elapsed < Duration::from_secs(60), || format!("took {elapsed:?}"))?;
    Ok(format!("{cases} triples equal, {elapsed:.2?}"))
}

fn lcs_oracle(a: &[u8], b: &[u8]) -> usize {
    // longest subsequence of `b` (enumerated by bitmask) that is also a subsequence of `a`
    let is_subsequence = |sub: &[u8], of: &[u8]| {
        let mut it = of.iter();
        sub.iter().all(|x| it.any(|y| y == x))
    };
    (0u32..1 << b.len())
        .map(|mask| (0..b.len()).filter(|i| mask >> i & 1 == 1).map(|i| b[i]).collect::<Vec<u8>>())
        .filter(|sub| is_subsequence(sub, a))
        .map(|sub| sub.len())
        .max()
        .unwrap_or(0)
}

fn rouge_l_oracle() -> Outcome {
    let mut rng = SeededRng::new(1000);
    for case in 0..1000 {
        let seq = |rng: &mut SeededRng| {
            let n = rng.below(7) as usize;
            (0..n).map(|_| rng.below(4) as u8).collect::<Vec<u8>>()
        };
        let (reference, hypothesis) = (seq(&mut rng), seq(&mut rng));
        let lcs = lcs_oracle(&reference, &hypothesis);
        let p = if hypothesis.is_empty() { 0.0 } else { lcs as f64 / hypothesis.len() as f64 };
        let r = if reference.is_empty() { 0.0 } else { lcs as f64 / reference.len() as f64 };
        let want = if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 };
        let got = rouge_l_tokens(&reference, &hypothesis).f1;
        ensure(got == want, || format!("case {case}: ref {reference:?} hyp {hypothesis:?}: {got} != {want}"))?;
    }
    Ok("1000 random pairs equal".into())
}

fn kmre_checks() -> Outcome {
    // (text, words, sentences, syllables) counted by hand
    let cases = [
        ("Le chat dort.", 130.355),
        // 9 words, 2 sentences, 11 syllables: les en-fants jouent dans le jar-din / il fait beau
        ("Les enfants jouent dans le jardin. Il fait beau !", 207.0 - 1.015 * 4.5 - 73.6 * 11.0 / 9.0),
        // 1 word, 1 sentence, 2 syllables
        ("Bonjour.", 207.0 - 1.015 - 147.2),
    ];
    for (text, expected) in cases {
        let got = kmre(text).map_err(|e| e.to_string())?;
        ensure((got - expected).abs() < 5e-4, || format!("{text:?}: {got} vs {expected}"))?;
        for k in 2..=6 {
            let repeated = vec![text; k].join(" ");
            let again = kmre(&repeated).map_err(|e| e.to_string())?;
            ensure(again == got, || format!("{text:?} x{k}: {again} != {got}"))?;
        }
    }
    Ok("3 hand texts to 3 decimals; self-concatenation x2..x6 exact".into())
}

// --------------------------------------------------------------- adapters

fn random_matrix(rows: usize, cols: usize, rng: &mut SeededRng) -> Matrix {
    Matrix::uniform(rows, cols, -1.0, 1.0, rng)
}

fn random_vec(n: usize, rng: &mut SeededRng) -> Vec<f64> {
    (0..n).map(|_| rng.uniform(-1.0, 1.0)).collect()
}

fn zero_delta() -> Outcome {
    let mut rng = SeededRng::new(64);
    for case in 0..100 {
        let d = 1 + rng.below(64) as usize;
        let k = 1 + rng.below(64) as usize;
        let r = 1 + rng.below(16.min(d.min(k)) as u64) as usize;
        let n_up = 1 + rng.below(3) as usize;
        let base = random_matrix(d, k, &mut rng);
        let x = random_vec(k, &mut rng);
        let expected = base.matvec(&x).map_err(|e| e.to_string())?;
        let lora = LoraLayer::new(base.clone(), r, rng.uniform(0.5, 32.0), case).map_err(|e| e.to_string())?;
        let mtl = MtlLoraLayer::new(base, r, 3, n_up, 0.5, case).map_err(|e| e.to_string())?;
        for task in 0..3 {
            let a = lora.forward(&x, task).map_err(|e| e.to_string())?;
            let b = mtl.forward(&x, task).map_err(|e| e.to_string())?;
            let same = |v: &[f64]| v.iter().zip(&expected).all(|(p, q)| p.to_bits() == q.to_bits() || p == q);
            ensure(same(&a), || format!("case {case}: LoRA differs from base"))?;
            ensure(same(&b), || format!("case {case} task {task}: MTL-LoRA differs from base"))?;
        }
    }
    Ok("100 random layers, 3 tasks each, output = W0·x".into())
}

fn gradient_verification() -> Outcome {
    let mut rng = SeededRng::new(50);
    let mut worst: f64 = 0.0;
    let mut entries = 0;
    for case in 0..50 {
        let d = 1 + rng.below(8) as usize;
        let k = 1 + rng.below(8) as usize;
        let r = 1 + rng.below(d.min(k) as u64) as usize;
        let x = random_vec(k, &mut rng);
        let target = random_vec(d, &mut rng);

        let lora = LoraLayer::from_parts(
            random_matrix(d, k, &mut rng),
            random_matrix(r, k, &mut rng),
            random_matrix(d, r, &mut rng),
            rng.uniform(0.5, 16.0),
        )
        .map_err(|e| e.to_string())?;
        let report = grad_check(&lora, &x, 0, &target, 1e-5).map_err(|e| e.to_string())?;
        ensure(report.max_relative_error < 1e-4, || format!("LoRA case {case}: {report:?}"))?;
        worst = worst.max(report.max_relative_error);
        entries += report.entries_checked;

        let n_tasks = 1 + rng.below(3) as usize;
        let n_up = 1 + rng.below(3) as usize;
        let mtl = MtlLoraLayer::from_parts(
            random_matrix(d, k, &mut rng),
            random_matrix(r, k, &mut rng),
            (0..n_tasks).map(|_| random_matrix(r, r, &mut rng)).collect(),
            (0..n_up).map(|_| random_matrix(d, r, &mut rng)).collect(),
            (0..n_tasks).map(|_| random_vec(n_up, &mut rng)).collect(),
            rng.uniform(0.25, 2.0),
        )
        .map_err(|e| e.to_string())?;
        let task = rng.below(n_tasks as u64) as usize;
        let names = mtl.param_group_names();
        ensure(names.iter().any(|n| n.starts_with("Lambda")) && names.iter().any(|n| n.starts_with("logits")), || {
            format!("missing Lambda/logits groups: {names:?}")
        })?;
        let report = grad_check(&mtl, &x, task, &target, 1e-5).map_err(|e| e.to_string())?;
        ensure(report.max_relative_error < 1e-4, || format!("MTL case {case}: {report:?}"))?;
        worst = worst.max(report.max_relative_error);
        entries += report.entries_checked;
    }
    Ok(format!("50 LoRA + 50 MTL-LoRA layers, {entries} entries, max rel err {worst:.2e}"))
}

fn lora_reduction() -> Outcome {
    let mut rng = SeededRng::new(12);
    let mut worst: f64 = 0.0;
    for case in 0..100 {
        let d = 1 + rng.below(16) as usize;
        let k = 1 + rng.below(16) as usize;
        let r = 1 + rng.below(d.min(k) as u64) as usize;
        let alpha = rng.uniform(0.5, 32.0);
        let (base, down, up) = (random_matrix(d, k, &mut rng), random_matrix(r, k, &mut rng), random_matrix(d, r, &mut rng));
        let lora = LoraLayer::from_parts(base.clone(), down.clone(), up.clone(), alpha).map_err(|e| e.to_string())?;
        let lambda = Matrix::identity(r).scaled(alpha / r as f64);
        let mtl = MtlLoraLayer::from_parts(base, down, vec![lambda], vec![up], vec![vec![rng.uniform(-2.0, 2.0)]], 0.5)
            .map_err(|e| e.to_string())?;
        let x = random_vec(k, &mut rng);
        let a = lora.lora_forward(&x).map_err(|e| e.to_string())?;
        let b = mtl.mtl_forward(&x, 0).map_err(|e| e.to_string())?;
        let diff = a.iter().zip(&b).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);
        worst = worst.max(diff);
        ensure(diff <= 1e-12, || format!("case {case}: max |Δ| = {diff:e}"))?;
    }
    Ok(format!("100 inputs, max |Δ| = {worst:.1e}"))
}

fn mtl_loss_checks() -> Outcome {
    let mut rng = SeededRng::new(3);
    for case in 0..200 {
        let n = 1 + rng.below(6) as usize;
        let counts: Vec<usize> = (0..n).map(|_| 1 + rng.below(1000) as usize).collect();
        let weights = TaskWeights::from_counts(&counts).map_err(|e| e.to_string())?;
        let sum: f64 = weights.weights().iter().sum();
        ensure((sum - 1.0).abs() <= 1e-12, || format!("case {case}: weights sum to {sum}"))?;
        let common = rng.uniform(0.0, 10.0);
        let loss = mtl_loss(&vec![common; n], &weights).map_err(|e| e.to_string())?;
        ensure(loss == common, || format!("case {case}: {loss} != {common}"))?;
    }
    Ok("200 count vectors: weights sum to 1, equal losses preserved exactly".into())
}

// -------------------------------------------------------------- retrieval

fn retrieval_checks() -> Outcome {
    let mut rng = SeededRng::new(1000);
    let tasks = TaskKind::ALL;
    let mut queries = 0;
    for round in 0..10 {
        let dim = 2 + rng.below(15) as usize;
        // small integer coordinates so that distance ties actually occur
        let entries: Vec<IndexEntry> = (0..1000)
            .map(|i| IndexEntry {
                id: format!("p{:04}", (i * 7919 + round * 13) % 10007),
                task: tasks[rng.below(3) as usize],
                vector: (0..dim).map(|_| rng.below(5) as f32).collect(),
            })
            .collect();
        let index = EmbeddingIndex::new(dim, entries.clone()).map_err(|e| e.to_string())?;
        for _ in 0..20 {
            let query: Vec<f32> = (0..dim).map(|_| rng.below(5) as f32).collect();
            let task = tasks[rng.below(3) as usize];
            let k = 1 + rng.below(50) as usize;
            let mut brute: Vec<(f64, &str)> = entries
                .iter()
                .filter(|e| e.task == task)
                .map(|e| {
                    let d: f64 = e.vector.iter().zip(&query).map(|(a, b)| (f64::from(*a) - f64::from(*b)).powi(2)).sum();
                    (d.sqrt(), e.id.as_str())
                })
                .collect();
            brute.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(b.1)));
            brute.truncate(k);
            let got = knn(&index, &query, k, task, None).map_err(|e| e.to_string())?;
            let got_ids: Vec<&str> = got.neighbors.iter().map(|n| n.id.as_str()).collect();
            let want_ids: Vec<&str> = brute.iter().map(|b| b.1).collect();
            ensure(got_ids == want_ids, || format!("round {round}: {got_ids:?} != {want_ids:?}"))?;
            queries += 1;
        }
    }

    let mut per_task = BTreeMap::new();
    for (t, task) in tasks.iter().enumerate() {
        let demos = (0..3)
            .map(|j| TextPair {
                id: format!("t{}-{j}", t + 1),
                task: *task,
                split: Split::Train,
                source: "x.".into(),
                target: "y.".into(),
                meta: Default::default(),
            })
            .collect::<Vec<_>>();
        per_task.insert(*task, demos);
    }
    let label: HashMap<TaskKind, &str> = tasks.iter().zip(["t1", "t2", "t3"]).map(|(t, l)| (*t, l)).collect();
    let pattern = |ordering| -> Result<String, String> {
        let config = RetrievalConfig { shots_per_task: 3, tasks: tasks.to_vec(), ordering, seed: 0, pool_split: Split::Train };
        let ordered = order_demonstrations(&per_task, &config).map_err(|e| e.to_string())?;
        Ok(ordered.iter().map(|(t, _)| label[t]).collect::<Vec<_>>().join(", "))
    };
    let grouped = pattern(DemoOrdering::Grouped)?;
    let interleaved = pattern(DemoOrdering::Interleaved)?;
    ensure(grouped == "t1, t1, t1, t2, t2, t2, t3, t3, t3", || format!("grouped: {grouped}"))?;
    ensure(interleaved == "t1, t2, t3, t1, t2, t3, t1, t2, t3", || format!("interleaved: {interleaved}"))?;
    Ok(format!("{queries} queries on 1000-entry indices match brute force; grouped and interleaved patterns match"))
}

// --------------------------------------------------------------- pipeline

fn write_pipeline_corpus(path: &Path) -> Result<(), String> {
    let mut rng = SeededRng::new(53);
    let mut pairs = synthetic_pairs(&mut rng, "e-test", TaskKind::EtrRewrite, Split::Test, 53);
    pairs.extend(synthetic_pairs(&mut rng, "e-train", TaskKind::EtrRewrite, Split::Train, 40));
    pairs.extend(synthetic_pairs(&mut rng, "o-train", TaskKind::Summarization, Split::Train, 40));
    pairs.extend(synthetic_pairs(&mut rng, "w-train", TaskKind::Simplification, Split::Train, 40));
    let corpus = etr_core::Corpus::from_pairs(pairs).map_err(|e| e.to_string())?;
    let mut buf = Vec::new();
    corpus.write_jsonl(&mut buf).map_err(|e| e.to_string())?;
    parse_jsonl(buf.as_slice()).map_err(|e| e.to_string())?;
    fs::write(path, buf).map_err(|e| e.to_string())
}

fn etr_bench(args: &[&str]) -> Result<(), String> {
    let output = Command::new(env!("CARGO_BIN_EXE_etr-bench")).args(args).output().map_err(|e| e.to_string())?;
    ensure(output.status.success(), || {
        format!("etr-bench {} failed: {}", args.join(" "), String::from_utf8_lossy(&output.stderr))
    })
}

fn report_files(dir: &Path) -> Result<BTreeMap<String, Vec<u8>>, String> {
    let mut files = BTreeMap::new();
    for entry in fs::read_dir(dir).map_err(|e| e.to_string())? {
        let path = entry.map_err(|e| e.to_string())?.path();
        let name = path.file_name().unwrap().to_string_lossy().into_owned();
        files.insert(name, fs::read(&path).map_err(|e| e.to_string())?);
    }
    Ok(files)
}

fn pipeline_determinism() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let corpus = tmp.path().join("corpus.jsonl");
    write_pipeline_corpus(&corpus)?;
    let corpus = corpus.to_str().unwrap().to_string();
    let mut reports = Vec::new();
    let mut slowest = Duration::ZERO;
    for attempt in ["a", "b"] {
        let out = tmp.path().join(attempt);
        let out = out.to_str().unwrap();
        let start = Instant::now();
        etr_bench(&[
            "run", "--corpus", &corpus, "--split", "test", "--method", "rag", "--tasks", "E,O,W", "--k", "3",
            "--ordering", "interleaved", "--backend-url", "mock", "--embed-url", "mock", "--seeds", "1,2,3,4,5",
            "--out", out,
        ])?;
        etr_bench(&["evaluate", "--run", out, "--corpus", &corpus, "--backend-url", "mock"])?;
        slowest = slowest.max(start.elapsed());
        let records: usize = (1..=5)
            .map(|s| fs::read_to_string(Path::new(out).join(format!("records/seed-{s}.jsonl"))).map(|t| t.lines().count()))
            .sum::<Result<usize, _>>()
            .map_err(|e| e.to_string())?;
        ensure(records == 265, || format!("{records} records, expected 265"))?;
        reports.push(report_files(&Path::new(out).join("report"))?);
    }
    ensure(reports[0] == reports[1], || "report files differ between runs".into())?;
    ensure(reports[0].len() == 8, || format!("report files: {:?}", reports[0].keys().collect::<Vec<_>>()))?;
    ensure(slowest < Duration::from_secs(30), || format!("run+evaluate took {slowest:?}"))?;
    Ok(format!("265 records per run, {} identical report files, slowest run+evaluate {slowest:.2?}", reports[0].len()))
}

// ----------------------------------------------------------------- rubric

fn annotation(sample: &str, informations: [BinaryAnswer; 5]) -> RubricAnnotation {
    let info_codes = ["CI3", "CI4", "CI5", "CI6", "CI8"];
    RubricAnnotation {
        annotator: "ann".into(),
        sample_id: sample.into(),
        answers: RUBRIC
            .iter()
            .map(|q| {
                let a = match (info_codes.iter().position(|c| *c == q.code), q.scale) {
                    (Some(i), _) => Answer::Binary(informations[i]),
                    (None, Scale::BinaryNA) => Answer::Binary(BinaryAnswer::Respected),
                    (None, Scale::Likert0to4) => Answer::Likert(4),
                };
                (q.code.to_string(), a)
            })
            .collect(),
    }
}

fn rubric_checks() -> Outcome {
    use BinaryAnswer::{NotApplicable as Na, NotRespected as No, Respected as Yes};
    let info = etr_annoserve::Category::Informations;

    let all = aggregate_rubric(&[annotation("s1", [Yes; 5]), annotation("s2", [Yes; 5])]).map_err(|e| e.to_string())?;
    ensure(all.categories.values().all(|i| i.mean == 1.0 && i.half_width == 0.0), || format!("{all:?}"))?;
    ensure(all.global.is_some_and(|g| g.mean == 1.0 && g.half_width == 0.0), || format!("{all:?}"))?;

    let one = aggregate_rubric(&[annotation("s1", [Yes, Yes, Yes, No, Na])]).map_err(|e| e.to_string())?;
    ensure(one.categories[&info].mean == 0.75, || format!("rate {}", one.categories[&info].mean))?;

    let two = aggregate_rubric(&[annotation("s1", [Yes, Yes, Yes, Yes, No]), annotation("s2", [Yes, Yes, Yes, No, No])])
        .map_err(|e| e.to_string())?;
    let i = two.categories[&info];
    // one degree of freedom: t quantile is tan(π(p − ½)); s = 0.2/√2
    let expected = (std::f64::consts::PI * 0.475).tan() * (0.2 / 2f64.sqrt()) / 2f64.sqrt();
    ensure((i.mean - 0.7).abs() < 1e-12, || format!("mean {}", i.mean))?;
    ensure((i.half_width - expected).abs() < 1e-9, || format!("half-width {} vs {expected}", i.half_width))?;

    let samples: Vec<Sample> = (0..240)
        .map(|i| Sample { id: format!("m{}-{i}", i % 4), source: "s".into(), output: "o".into(), model: format!("m{}", i % 4) })
        .collect();
    let annotators: Vec<String> = (0..10).map(|a| format!("annotator{a}")).collect();
    let allocation = create_assignments(&samples, &annotators, 24, 2025).map_err(|e| e.to_string())?;
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for a in &allocation.assignments {
        ensure(a.samples.len() == 24, || format!("{} has {} samples", a.annotator, a.samples.len()))?;
        for s in &a.samples {
            *counts.entry(s.sample_id.as_str()).or_default() += 1;
        }
    }
    ensure(counts.len() == 240 && counts.values().all(|&c| c == 1), || {
        format!("{} distinct samples assigned", counts.len())
    })?;
    Ok(format!("fixtures 1.0 / 0.75 / 0.7 ± {:.4}; 240 samples each assigned once", i.half_width))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 12] = [
        ("SRB table arithmetic", srb_table_rows),
        ("Metric identity suite", metric_identity),
        ("SARI oracle equivalence", sari_exhaustive),
        ("ROUGE-L oracle equivalence", rouge_l_oracle),
        ("KMRE formula check", kmre_checks),
        ("Adapter zero-delta", zero_delta),
        ("Gradient verification", gradient_verification),
        ("LoRA reduction", lora_reduction),
        ("MTL loss", mtl_loss_checks),
        ("Retrieval", retrieval_checks),
        ("Pipeline determinism", pipeline_determinism),
        ("Rubric aggregation", rubric_checks),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        match check() {
            Ok(detail) => println!("PASS  {name}: {detail}"),
            Err(reason) => {
                failed += 1;
                println!("FAIL  {name}: {reason}");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
