mod common;

use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use survey_service::{router, SessionStore};
use tower::ServiceExt;

fn app() -> Router {
    router(Arc::new(SessionStore::new(common::fitted_gaussian())))
}

async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let builder = Request::builder().method(method).uri(uri);
    let request = match body {
        Some(b) => builder.header("content-type", "application/json").body(Body::from(b.to_string())),
        None => builder.body(Body::empty()),
    }
    .unwrap();
    let response = app.clone().oneshot(request).await.unwrap();
    let status = response.status();
    let bytes = response.into_body().collect().await.unwrap().to_bytes();
    (status, serde_json::from_slice(&bytes).unwrap_or(Value::Null))
}

#[tokio::test]
async fn healthz() {
    let (status, body) = call(&app(), "GET", "/healthz", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["status"], "ok");
}

#[tokio::test]
async fn full_survey_flow() {
    let app = app();
    let (status, created) = call(&app, "POST", "/sessions", Some(json!({"budget": 3}))).await;
    assert_eq!(status, StatusCode::CREATED);
    assert_eq!(created["strategy"], "active_A");
    let id = created["session_id"].as_str().unwrap().to_string();

    let (_, pre) = call(&app, "GET", &format!("/sessions/{id}/predictions"), None).await;
    assert_eq!(pre["predictions"].as_array().unwrap().len(), 10);
    assert!(pre["predictions"].as_array().unwrap().iter().all(|p| p["flag"] == "imputed"));

    for step in 1..=3 {
        let (status, next) = call(&app, "GET", &format!("/sessions/{id}/next"), None).await;
        assert_eq!(status, StatusCode::OK);
        let q = &next["question"];
        assert_eq!(q["step"], step);
        assert!(q["text"].is_string());
        let qid = q["question_id"].as_str().unwrap();
        let body =
            if step == 2 { json!({"question_id": qid, "skip": true}) } else { json!({"question_id": qid, "value": 2}) };
        let (status, progress) = call(&app, "POST", &format!("/sessions/{id}/responses"), Some(body)).await;
        assert_eq!(status, StatusCode::OK);
        assert_eq!(progress["asked"], step);
    }
    let (_, done) = call(&app, "GET", &format!("/sessions/{id}/next"), None).await;
    assert_eq!(done["status"], "completed");
    assert!(done["question"].is_null());

    let (_, preds) = call(&app, "GET", &format!("/sessions/{id}/predictions"), None).await;
    let flags: Vec<&str> =
        preds["predictions"].as_array().unwrap().iter().map(|p| p["flag"].as_str().unwrap()).collect();
    assert_eq!(flags.iter().filter(|f| **f == "asked").count(), 2);
    assert_eq!(flags.iter().filter(|f| **f == "skipped").count(), 1);

    let (status, session) = call(&app, "GET", &format!("/sessions/{id}"), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(session["asked"].as_array().unwrap().len(), 3);
}

#[tokio::test]
async fn errors_are_json() {
    let app = app();
    let (status, body) = call(&app, "GET", "/sessions/missing/next", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(body["code"], "unknown_session");
    assert!(body["message"].as_str().unwrap().contains("missing"));

    let (status, body) = call(&app, "POST", "/sessions", Some(json!({"budget": 50}))).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(body["code"], "invalid_request");

    let (status, body) = call(&app, "POST", "/sessions", Some(json!({"budget": 2, "strategy": "adaptive"}))).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(body["code"], "strategy_model_mismatch");

    let (status, body) = call(&app, "POST", "/sessions", Some(json!({"budjet": 2}))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(body["code"], "bad_request");

    let (_, created) = call(&app, "POST", "/sessions", Some(json!({"budget": 2}))).await;
    let id = created["session_id"].as_str().unwrap();
    let (status, body) =
        call(&app, "POST", &format!("/sessions/{id}/responses"), Some(json!({"question_id": "q1", "value": 1}))).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(body["code"], "no_pending_question");

    let (_, next) = call(&app, "GET", &format!("/sessions/{id}/next"), None).await;
    let qid = next["question"]["question_id"].as_str().unwrap();
    let (status, body) =
        call(&app, "POST", &format!("/sessions/{id}/responses"), Some(json!({"question_id": qid, "value": 0}))).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(body["code"], "invalid_value");
    let other = if qid == "q1" { "q2" } else { "q1" };
    let (status, body) =
        call(&app, "POST", &format!("/sessions/{id}/responses"), Some(json!({"question_id": other, "value": 1}))).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(body["code"], "out_of_order");
}

#[tokio::test]
async fn ending_and_abandoning() {
    let app = app();
    let (_, created) = call(&app, "POST", "/sessions", Some(json!({"budget": 4}))).await;
    let id = created["session_id"].as_str().unwrap();
    let (status, progress) = call(&app, "POST", &format!("/sessions/{id}/end"), Some(json!({"abandoned": true}))).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(progress["status"], "abandoned");
    let (status, body) = call(&app, "POST", &format!("/sessions/{id}/end"), None).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(body["code"], "session_closed");
}
