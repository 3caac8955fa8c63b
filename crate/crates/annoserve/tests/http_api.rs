use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use etr_annoserve::server::FullReport;
use etr_annoserve::{create_assignments, router, AppState, Sample, Scale, RUBRIC};
use serde_json::{json, Value};
use tower::ServiceExt;

fn samples() -> Vec<Sample> {
    (0..6)
        .map(|i| Sample {
            id: format!("pair{i}"),
            source: format!("Texte source {i}."),
            output: format!("Texte simple {i}."),
            model: if i % 2 == 0 { "secret-model-a".into() } else { "secret-model-b".into() },
        })
        .collect()
}

fn app(dir: Option<&std::path::Path>) -> Router {
    let samples = samples();
    let annotators = vec!["alice".to_string(), "bob".to_string()];
    let allocation = create_assignments(&samples, &annotators, 3, 11).unwrap();
    let state = match dir {
        Some(d) => AppState::persistent(&samples, allocation, d).unwrap(),
        None => AppState::in_memory(&samples, allocation),
    };
    router(Arc::new(state))
}

async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Vec<u8>) {
    let request = Request::builder().method(method).uri(uri);
    let request = match body {
        Some(b) => request
            .header("content-type", "application/json")
            .body(Body::from(serde_json::to_vec(&b).unwrap()))
            .unwrap(),
        None => request.body(Body::empty()).unwrap(),
    };
    let response = app.clone().oneshot(request).await.unwrap();
    let status = response.status();
    let bytes = axum::body::to_bytes(response.into_body(), usize::MAX).await.unwrap();
    (status, bytes.to_vec())
}

async fn call_json(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let (status, bytes) = call(app, method, uri, body).await;
    (status, serde_json::from_slice(&bytes).unwrap())
}

fn answers(likert: u8) -> Value {
    let map: serde_json::Map<String, Value> = RUBRIC
        .iter()
        .map(|q| {
            let v = match q.scale {
                Scale::BinaryNA => json!("respected"),
                Scale::Likert0to4 => json!(likert),
            };
            (q.code.to_string(), v)
        })
        .collect();
    Value::Object(map)
}

async fn first_sample(app: &Router, annotator: &str) -> String {
    let (_, body) = call_json(app, "GET", &format!("/assignments/{annotator}"), None).await;
    body["samples"][0]["sample_id"].as_str().unwrap().to_string()
}

#[tokio::test]
async fn rubric_lists_every_question() {
    let (status, body) = call_json(&app(None), "GET", "/rubric", None).await;
    assert_eq!(status, StatusCode::OK);
    let list = body.as_array().unwrap();
    assert_eq!(list.len(), RUBRIC.len());
    assert_eq!(list[0]["code"], "CI3");
    assert_eq!(list[0]["scale"], "BinaryNA");
    assert_eq!(list[0]["category"], "Informations");
}

#[tokio::test]
async fn assignments_are_blind() {
    let app = app(None);
    let (status, bytes) = call(&app, "GET", "/assignments/alice", None).await;
    assert_eq!(status, StatusCode::OK);
    let text = String::from_utf8(bytes).unwrap();
    assert!(!text.contains("secret-model"));
    assert!(!text.contains("pair"));
    let body: Value = serde_json::from_str(&text).unwrap();
    assert_eq!(body["samples"].as_array().unwrap().len(), 3);
    assert_eq!(body["completed"].as_array().unwrap().len(), 0);

    let (status, _) = call_json(&app, "GET", "/assignments/mallory", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn annotation_lifecycle() {
    let app = app(None);
    let sample = first_sample(&app, "alice").await;
    let body = json!({"annotator": "alice", "sample_id": sample, "answers": answers(3)});
    let (status, ack) = call_json(&app, "POST", "/annotations", Some(body.clone())).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(ack["revision"], 1);
    let (_, ack) = call_json(&app, "POST", "/annotations", Some(body)).await;
    assert_eq!(ack["revision"], 2);

    let (_, view) = call_json(&app, "GET", "/assignments/alice", None).await;
    assert_eq!(view["completed"], json!([sample]));

    let mut partial = answers(3);
    partial.as_object_mut().unwrap().remove("CPM14");
    let (status, err) = call_json(
        &app,
        "POST",
        "/annotations",
        Some(json!({"annotator": "alice", "sample_id": sample, "answers": partial})),
    )
    .await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(err["missing"], json!(["CPM14"]));
    assert!(err["error"].as_str().unwrap().contains("CPM14"));

    let bob_sample = first_sample(&app, "bob").await;
    let (status, _) = call_json(
        &app,
        "POST",
        "/annotations",
        Some(json!({"annotator": "alice", "sample_id": bob_sample, "answers": answers(3)})),
    )
    .await;
    assert_eq!(status, StatusCode::FORBIDDEN);
}

#[tokio::test]
async fn report_and_export() {
    let app = app(None);
    let (status, _) = call_json(&app, "GET", "/report", None).await;
    assert_eq!(status, StatusCode::CONFLICT);

    for (annotator, likert) in [("alice", 4), ("bob", 2)] {
        let sample = first_sample(&app, annotator).await;
        let body = json!({"annotator": annotator, "sample_id": sample, "answers": answers(likert)});
        assert_eq!(call(&app, "POST", "/annotations", Some(body)).await.0, StatusCode::OK);
    }
    let (status, bytes) = call(&app, "GET", "/report", None).await;
    assert_eq!(status, StatusCode::OK);
    let report: FullReport = serde_json::from_slice(&bytes).unwrap();
    assert_eq!(report.overall.n_units, 2);
    assert_eq!(report.overall.global.unwrap().mean, 1.0);
    assert_eq!(report.overall.likert["CA1"].mean, 3.0);
    let per_model: usize = report.by_model.values().map(|r| r.n_units).sum();
    assert_eq!(per_model, 2);

    let (status, bytes) = call(&app, "GET", "/export.csv", None).await;
    assert_eq!(status, StatusCode::OK);
    let mut reader = csv::Reader::from_reader(bytes.as_slice());
    assert_eq!(reader.headers().unwrap().get(0), Some("annotator"));
    let rows: Vec<csv::StringRecord> = reader.records().map(|r| r.unwrap()).collect();
    assert_eq!(rows.len(), 2 * RUBRIC.len());
    assert!(rows.iter().all(|r| r[3].starts_with("secret-model")));
}

#[tokio::test]
async fn persistent_state_survives_restart() {
    let dir = tempfile::tempdir().unwrap();
    let first = app(Some(dir.path()));
    let sample = first_sample(&first, "bob").await;
    let body = json!({"annotator": "bob", "sample_id": sample, "answers": answers(1)});
    assert_eq!(call(&first, "POST", "/annotations", Some(body.clone())).await.0, StatusCode::OK);
    drop(first);

    let second = app(Some(dir.path()));
    let (_, ack) = call_json(&second, "POST", "/annotations", Some(body)).await;
    assert_eq!(ack["revision"], 2);
}
