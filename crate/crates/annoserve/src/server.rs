//! axum routes over a shared [`AppState`].

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::Path;
use std::sync::Arc;

use axum::extract::{Path as UrlPath, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Serialize;
use tokio::sync::Mutex;

use crate::assign::{Allocation, Assignment, Sample};
use crate::report::{aggregate_rubric, RubricReport};
use crate::rubric::{question, RUBRIC};
use crate::store::{Ack, AnnotationStore, RubricAnnotation};
use crate::AnnoError;

pub struct AppState {
    assignments: BTreeMap<String, Assignment>,
    /// blind id → (real sample id, model label)
    blind: HashMap<String, (String, String)>,
    store: Mutex<AnnotationStore>,
}

impl AppState {
    fn allowed(allocation: &Allocation) -> HashMap<String, HashSet<String>> {
        allocation
            .assignments
            .iter()
            .map(|a| (a.annotator.clone(), a.samples.iter().map(|s| s.sample_id.clone()).collect()))
            .collect()
    }

    fn build(samples: &[Sample], allocation: Allocation, store: AnnotationStore) -> Self {
        let blind = allocation
            .blind_ids
            .iter()
            .zip(samples)
            .map(|(b, s)| (b.clone(), (s.id.clone(), s.model.clone())))
            .collect();
        let assignments = allocation.assignments.into_iter().map(|a| (a.annotator.clone(), a)).collect();
        Self { assignments, blind, store: Mutex::new(store) }
    }

    /// State whose annotations live only in memory.
    pub fn in_memory(samples: &[Sample], allocation: Allocation) -> Self {
        let store = AnnotationStore::in_memory(Self::allowed(&allocation));
        Self::build(samples, allocation, store)
    }

    /// State persisted under `dir`; existing annotations are replayed.
    pub fn persistent(samples: &[Sample], allocation: Allocation, dir: &Path) -> crate::Result<Self> {
        let store = AnnotationStore::open(dir, Self::allowed(&allocation))?;
        Ok(Self::build(samples, allocation, store))
    }
}

#[derive(Serialize)]
struct ErrorBody {
    error: String,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    missing: Vec<String>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    invalid: Vec<String>,
}

impl IntoResponse for AnnoError {
    fn into_response(self) -> Response {
        let status = match &self {
            AnnoError::UnknownAnnotator(_) => StatusCode::NOT_FOUND,
            AnnoError::Forbidden { .. } => StatusCode::FORBIDDEN,
            AnnoError::Incomplete { .. } | AnnoError::InvalidAnswers(_) => StatusCode::UNPROCESSABLE_ENTITY,
            AnnoError::NoAnnotations => StatusCode::CONFLICT,
            AnnoError::Assignment(_) => StatusCode::BAD_REQUEST,
            AnnoError::Io(_) | AnnoError::Json(_) => StatusCode::INTERNAL_SERVER_ERROR,
        };
        let body = ErrorBody {
            error: self.to_string(),
            missing: match &self {
                AnnoError::Incomplete { missing } => missing.clone(),
                _ => Vec::new(),
            },
            invalid: match &self {
                AnnoError::InvalidAnswers(v) => v.clone(),
                _ => Vec::new(),
            },
        };
        (status, Json(body)).into_response()
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/rubric", get(rubric))
        .route("/assignments/{annotator}", get(assignment))
        .route("/annotations", post(annotate))
        .route("/report", get(report))
        .route("/export.csv", get(export))
        .with_state(state)
}

async fn rubric() -> Json<&'static [crate::rubric::RubricQuestion]> {
    Json(RUBRIC)
}

#[derive(Serialize)]
struct AssignmentView<'a> {
    #[serde(flatten)]
    assignment: &'a Assignment,
    completed: Vec<&'a str>,
}

async fn assignment(
    State(state): State<Arc<AppState>>,
    UrlPath(annotator): UrlPath<String>,
) -> Result<Response, AnnoError> {
    let assignment = state
        .assignments
        .get(&annotator)
        .ok_or_else(|| AnnoError::UnknownAnnotator(annotator.clone()))?;
    let store = state.store.lock().await;
    let completed = store.completed(&annotator);
    let completed = assignment
        .samples
        .iter()
        .map(|s| s.sample_id.as_str())
        .filter(|id| completed.contains(id))
        .collect();
    Ok(Json(AssignmentView { assignment, completed }).into_response())
}

async fn annotate(
    State(state): State<Arc<AppState>>,
    Json(annotation): Json<RubricAnnotation>,
) -> Result<Json<Ack>, AnnoError> {
    let mut store = state.store.lock().await;
    Ok(Json(store.record(annotation)?))
}

#[derive(Debug, Serialize, serde::Deserialize, PartialEq)]
pub struct FullReport {
    pub overall: RubricReport,
    pub by_model: BTreeMap<String, RubricReport>,
}

async fn report(State(state): State<Arc<AppState>>) -> Result<Json<FullReport>, AnnoError> {
    let store = state.store.lock().await;
    let current: Vec<RubricAnnotation> = store.current().map(|s| s.annotation.clone()).collect();
    drop(store);
    let overall = aggregate_rubric(&current)?;
    let mut grouped: BTreeMap<String, Vec<RubricAnnotation>> = BTreeMap::new();
    for a in current {
        let model = state.blind.get(&a.sample_id).map(|(_, m)| m.clone()).unwrap_or_default();
        grouped.entry(model).or_default().push(a);
    }
    let by_model = grouped
        .into_iter()
        .map(|(m, anns)| aggregate_rubric(&anns).map(|r| (m, r)))
        .collect::<crate::Result<_>>()?;
    Ok(Json(FullReport { overall, by_model }))
}

pub const EXPORT_HEADER: [&str; 10] = [
    "annotator",
    "sample_id",
    "sample",
    "model",
    "revision",
    "current",
    "received_at",
    "code",
    "category",
    "answer",
];

async fn export(State(state): State<Arc<AppState>>) -> Result<Response, AnnoError> {
    let store = state.store.lock().await;
    let mut out = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| AnnoError::Io(std::io::Error::other(e));
    out.write_record(EXPORT_HEADER).map_err(csv_err)?;
    for stored in store.all_revisions() {
        let a = &stored.annotation;
        let latest = store.history(&a.annotator, &a.sample_id).len() as u32;
        let (sample, model) = state.blind.get(&a.sample_id).cloned().unwrap_or_default();
        for (code, answer) in &a.answers {
            let category = question(code).map(|q| q.category.name()).unwrap_or("");
            out.write_record([
                a.annotator.as_str(),
                a.sample_id.as_str(),
                sample.as_str(),
                model.as_str(),
                &stored.revision.to_string(),
                if stored.revision == latest { "true" } else { "false" },
                stored.received_at.as_str(),
                code.as_str(),
                category,
                &answer.to_string(),
            ])
            .map_err(csv_err)?;
        }
    }
    let body = out.into_inner().map_err(|e| AnnoError::Io(e.into_error()))?;
    Ok(([(header::CONTENT_TYPE, "text/csv; charset=utf-8")], body).into_response())
}

/// Bind and serve until the process is stopped.
pub async fn serve(state: AppState, addr: std::net::SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    axum::serve(listener, router(Arc::new(state))).await
}
