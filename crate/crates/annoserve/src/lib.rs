//! Human-evaluation service for the easy-to-read guideline rubric.
//!
//! HTTP API (JSON unless noted):
//!
//! | Method | Path | Result |
//! |---|---|---|
//! | GET | `/rubric` | list of [`RubricQuestion`] |
//! | GET | `/assignments/{annotator}` | [`Assignment`] with blinded samples and progress |
//! | POST | `/annotations` | [`RubricAnnotation`] in, [`Ack`] out |
//! | GET | `/report` | overall [`RubricReport`] plus one per model |
//! | GET | `/export.csv` | every stored answer, all revisions (text/csv) |

pub mod assign;
pub mod report;
pub mod rubric;
pub mod server;
pub mod store;

use thiserror::Error;

pub use assign::{create_assignments, load_annotators, load_samples, Allocation, Assignment, BlindSample, Sample};
pub use report::{aggregate_rubric, t_interval, Interval, RubricReport};
pub use rubric::{Answer, BinaryAnswer, Category, RubricQuestion, Scale, RUBRIC};
pub use server::{router, AppState};
pub use store::{Ack, AnnotationStore, RubricAnnotation, StoredAnnotation};

#[derive(Debug, Error)]
pub enum AnnoError {
    #[error("assignment: {0}")]
    Assignment(String),
    #[error("unknown annotator {0:?}")]
    UnknownAnnotator(String),
    #[error("sample {sample_id:?} is not assigned to annotator {annotator:?}")]
    Forbidden { annotator: String, sample_id: String },
    #[error("missing answers for {}", missing.join(", "))]
    Incomplete { missing: Vec<String> },
    #[error("invalid answers: {}", .0.join("; "))]
    InvalidAnswers(Vec<String>),
    #[error("no annotations to aggregate")]
    NoAnnotations,
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, AnnoError>;
