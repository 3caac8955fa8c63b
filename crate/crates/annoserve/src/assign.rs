//! Blinded, balanced allocation of samples to annotators.

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::{AnnoError, Result};

/// A generated output awaiting evaluation. `model` never leaves the server.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub id: String,
    pub source: String,
    pub output: String,
    #[serde(default)]
    pub model: String,
}

/// What an annotator sees: an opaque id plus the two texts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlindSample {
    pub sample_id: String,
    pub source: String,
    pub output: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Assignment {
    pub annotator: String,
    pub samples: Vec<BlindSample>,
}

/// Opaque sample ids in seeded order, with the index of the real sample.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Allocation {
    pub assignments: Vec<Assignment>,
    /// `blind_ids[i]` is the opaque id given to `samples[i]`.
    pub blind_ids: Vec<String>,
}

fn shuffled_indices(n: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        // rejection sampling for an unbiased index in 0..=i
        let bound = (i + 1) as u64;
        let zone = u64::MAX - u64::MAX % bound;
        let j = loop {
            let v = rng.next_u64();
            if v < zone {
                break (v % bound) as usize;
            }
        };
        idx.swap(i, j);
    }
    idx
}

/// Shuffle samples with `seed` and hand annotator `a` the cyclic slots
/// `a·p .. (a+1)·p`. Every sample then receives ⌊|A|·p/|S|⌋ or ⌈|A|·p/|S|⌉
/// annotators and no annotator sees a sample twice.
pub fn create_assignments(
    samples: &[Sample],
    annotators: &[String],
    per_annotator: usize,
    seed: u64,
) -> Result<Allocation> {
    if samples.is_empty() || annotators.is_empty() {
        return Err(AnnoError::Assignment("need at least one sample and one annotator".into()));
    }
    if per_annotator == 0 || per_annotator > samples.len() {
        return Err(AnnoError::Assignment(format!(
            "per_annotator must be in 1..={}, got {per_annotator}",
            samples.len()
        )));
    }
    let mut seen = HashSet::new();
    if let Some(dup) = samples.iter().find(|s| !seen.insert(s.id.as_str())) {
        return Err(AnnoError::Assignment(format!("duplicate sample id {:?}", dup.id)));
    }
    let mut seen = HashSet::new();
    if let Some(dup) = annotators.iter().find(|a| !seen.insert(a.as_str())) {
        return Err(AnnoError::Assignment(format!("duplicate annotator {dup:?}")));
    }

    let order = shuffled_indices(samples.len(), seed);
    let width = samples.len().to_string().len().max(3);
    let mut blind_ids = vec![String::new(); samples.len()];
    for (pos, &i) in order.iter().enumerate() {
        blind_ids[i] = format!("S{:0width$}", pos + 1);
    }
    let assignments = annotators
        .iter()
        .enumerate()
        .map(|(a, annotator)| Assignment {
            annotator: annotator.clone(),
            samples: (0..per_annotator)
                .map(|k| {
                    let i = order[(a * per_annotator + k) % samples.len()];
                    BlindSample {
                        sample_id: blind_ids[i].clone(),
                        source: samples[i].source.clone(),
                        output: samples[i].output.clone(),
                    }
                })
                .collect(),
        })
        .collect();
    Ok(Allocation { assignments, blind_ids })
}

/// Read every `*.jsonl` file in `dir` (sorted by name), one [`Sample`] per line.
pub fn load_samples(dir: &Path) -> Result<Vec<Sample>> {
    let mut files: Vec<_> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
        .collect();
    files.sort();
    let mut samples = Vec::new();
    for file in files {
        for (n, line) in fs::read_to_string(&file)?.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let sample = serde_json::from_str(line).map_err(|e| {
                AnnoError::Assignment(format!("{}:{}: {e}", file.display(), n + 1))
            })?;
            samples.push(sample);
        }
    }
    Ok(samples)
}

/// One annotator id per non-empty line; `#` starts a comment.
pub fn load_annotators(path: &Path) -> Result<Vec<String>> {
    Ok(fs::read_to_string(path)?
        .lines()
        .map(|l| l.split('#').next().unwrap_or("").trim())
        .filter(|l| !l.is_empty())
        .map(str::to_string)
        .collect())
}
