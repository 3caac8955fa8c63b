//! Annotation persistence: an append-only JSONL log plus a materialized
//! snapshot of the current revision of every (annotator, sample) pair.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::rubric::{check_answer, question, Answer, RUBRIC};
use crate::{AnnoError, Result};

pub const LOG_FILE: &str = "annotations.log.jsonl";
pub const SNAPSHOT_FILE: &str = "snapshot.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RubricAnnotation {
    pub annotator: String,
    pub sample_id: String,
    pub answers: BTreeMap<String, Answer>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoredAnnotation {
    pub revision: u32,
    pub received_at: String,
    #[serde(flatten)]
    pub annotation: RubricAnnotation,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ack {
    pub annotator: String,
    pub sample_id: String,
    pub revision: u32,
}

/// Check codes and values; every problem is reported at once.
pub fn validate_answers(answers: &BTreeMap<String, Answer>) -> Result<()> {
    let mut invalid = Vec::new();
    for (code, answer) in answers {
        match question(code) {
            None => invalid.push(format!("{code}: unknown code")),
            Some(q) => {
                if let Err(reason) = check_answer(q, *answer) {
                    invalid.push(format!("{code}: {reason}"));
                }
            }
        }
    }
    if !invalid.is_empty() {
        return Err(AnnoError::InvalidAnswers(invalid));
    }
    let missing: Vec<String> = RUBRIC
        .iter()
        .filter(|q| !answers.contains_key(q.code))
        .map(|q| q.code.to_string())
        .collect();
    if !missing.is_empty() {
        return Err(AnnoError::Incomplete { missing });
    }
    Ok(())
}

type Key = (String, String);

#[derive(Debug)]
pub struct AnnotationStore {
    dir: Option<PathBuf>,
    allowed: HashMap<String, HashSet<String>>,
    history: BTreeMap<Key, Vec<StoredAnnotation>>,
}

impl AnnotationStore {
    /// In-memory store; nothing is persisted.
    pub fn in_memory(allowed: HashMap<String, HashSet<String>>) -> Self {
        Self { dir: None, allowed, history: BTreeMap::new() }
    }

    /// Open `dir`, replaying its log if present.
    pub fn open(dir: &Path, allowed: HashMap<String, HashSet<String>>) -> Result<Self> {
        fs::create_dir_all(dir)?;
        let mut store = Self { dir: Some(dir.to_path_buf()), allowed, history: BTreeMap::new() };
        match fs::read_to_string(dir.join(LOG_FILE)) {
            Ok(text) => {
                for line in text.lines().filter(|l| !l.trim().is_empty()) {
                    let entry: StoredAnnotation = serde_json::from_str(line)?;
                    let key = (entry.annotation.annotator.clone(), entry.annotation.sample_id.clone());
                    store.history.entry(key).or_default().push(entry);
                }
            }
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {}
            Err(e) => return Err(e.into()),
        }
        Ok(store)
    }

    pub fn record(&mut self, annotation: RubricAnnotation) -> Result<Ack> {
        let samples = self
            .allowed
            .get(&annotation.annotator)
            .ok_or_else(|| AnnoError::UnknownAnnotator(annotation.annotator.clone()))?;
        if !samples.contains(&annotation.sample_id) {
            return Err(AnnoError::Forbidden {
                annotator: annotation.annotator.clone(),
                sample_id: annotation.sample_id.clone(),
            });
        }
        validate_answers(&annotation.answers)?;

        let key = (annotation.annotator.clone(), annotation.sample_id.clone());
        let (key_annotator, key_sample) = key.clone();
        let revision = self.history.get(&key).map_or(0, |h| h.len() as u32) + 1;
        let entry = StoredAnnotation {
            revision,
            received_at: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true),
            annotation,
        };
        if let Some(dir) = &self.dir {
            let mut log = OpenOptions::new().create(true).append(true).open(dir.join(LOG_FILE))?;
            let mut line = serde_json::to_vec(&entry)?;
            line.push(b'\n');
            log.write_all(&line)?;
            log.sync_all()?;
        }
        self.history.entry(key).or_default().push(entry);
        if let Some(dir) = &self.dir {
            self.write_snapshot(dir)?;
        }
        Ok(Ack { annotator: key_annotator, sample_id: key_sample, revision })
    }

    fn write_snapshot(&self, dir: &Path) -> Result<()> {
        let current: Vec<&StoredAnnotation> = self.current().collect();
        let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
        serde_json::to_writer_pretty(&mut tmp, &current)?;
        tmp.write_all(b"\n")?;
        tmp.as_file().sync_all()?;
        tmp.persist(dir.join(SNAPSHOT_FILE)).map_err(|e| AnnoError::Io(e.error))?;
        Ok(())
    }

    /// Latest revision of every (annotator, sample), ordered by key.
    pub fn current(&self) -> impl Iterator<Item = &StoredAnnotation> {
        self.history.values().filter_map(|h| h.last())
    }

    /// Every revision, ordered by key then revision.
    pub fn all_revisions(&self) -> impl Iterator<Item = &StoredAnnotation> {
        self.history.values().flatten()
    }

    pub fn history(&self, annotator: &str, sample_id: &str) -> &[StoredAnnotation] {
        self.history
            .get(&(annotator.to_string(), sample_id.to_string()))
            .map_or(&[], Vec::as_slice)
    }

    /// Samples with at least one stored annotation, per annotator.
    pub fn completed(&self, annotator: &str) -> BTreeSet<&str> {
        self.history
            .keys()
            .filter(|k| k.0 == annotator)
            .map(|k| k.1.as_str())
            .collect()
    }
}
