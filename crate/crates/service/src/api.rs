use std::sync::Arc;

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};

use crate::error::ServiceError;
use crate::session::{CreateSession, NextQuestion, Prediction, Progress, Session};
use crate::store::{SessionStore, SubmitResponse};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
}

pub struct ApiError {
    status: StatusCode,
    body: ErrorBody,
}

impl From<ServiceError> for ApiError {
    fn from(e: ServiceError) -> Self {
        let status = match &e {
            ServiceError::UnknownSession(_) => StatusCode::NOT_FOUND,
            ServiceError::SessionClosed(_) | ServiceError::NoPendingQuestion | ServiceError::OutOfOrder { .. } => {
                StatusCode::CONFLICT
            }
            ServiceError::InvalidValue(_) | ServiceError::InvalidRequest(_) => StatusCode::UNPROCESSABLE_ENTITY,
            ServiceError::Core(
                survey_core::Error::StrategyModelMismatch { .. }
                | survey_core::Error::UnknownCovariate(_)
                | survey_core::Error::InvalidArgument(_),
            ) => StatusCode::UNPROCESSABLE_ENTITY,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        Self { status, body: ErrorBody { code: e.code().to_string(), message: e.to_string() } }
    }
}

impl From<JsonRejection> for ApiError {
    fn from(e: JsonRejection) -> Self {
        Self { status: StatusCode::BAD_REQUEST, body: ErrorBody { code: "bad_request".into(), message: e.body_text() } }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Created {
    pub session_id: String,
    pub status: crate::session::SessionStatus,
    pub budget: usize,
    pub strategy: String,
    pub model: survey_core::harness::ModelKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Predictions {
    pub session_id: String,
    pub asked: usize,
    pub predictions: Vec<Prediction>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EndSession {
    #[serde(default)]
    pub abandoned: bool,
}

async fn create(
    State(store): State<Arc<SessionStore>>,
    body: Result<Json<CreateSession>, JsonRejection>,
) -> Result<(StatusCode, Json<Created>), ApiError> {
    let Json(request) = body?;
    let s = store.create(&request)?;
    Ok((
        StatusCode::CREATED,
        Json(Created {
            session_id: s.id,
            status: s.status,
            budget: s.budget,
            strategy: s.strategy.name(),
            model: s.model,
        }),
    ))
}

async fn session(State(store): State<Arc<SessionStore>>, Path(id): Path<String>) -> ApiResult<Session> {
    Ok(Json(store.get(&id)?))
}

async fn next(State(store): State<Arc<SessionStore>>, Path(id): Path<String>) -> ApiResult<NextQuestion> {
    Ok(Json(store.next_question(&id)?))
}

async fn respond(
    State(store): State<Arc<SessionStore>>,
    Path(id): Path<String>,
    body: Result<Json<SubmitResponse>, JsonRejection>,
) -> ApiResult<Progress> {
    let Json(response) = body?;
    Ok(Json(store.submit(&id, &response)?))
}

async fn predictions(State(store): State<Arc<SessionStore>>, Path(id): Path<String>) -> ApiResult<Predictions> {
    let predictions = store.predictions(&id)?;
    let asked = store.get(&id)?.asked.len();
    Ok(Json(Predictions { session_id: id, asked, predictions }))
}

async fn end(
    State(store): State<Arc<SessionStore>>,
    Path(id): Path<String>,
    body: Option<Json<EndSession>>,
) -> ApiResult<Progress> {
    let abandoned = body.map(|Json(b)| b.abandoned).unwrap_or(false);
    Ok(Json(store.end(&id, abandoned)?))
}

async fn healthz(State(store): State<Arc<SessionStore>>) -> Json<serde_json::Value> {
    Json(serde_json::json!({ "status": "ok", "questions": store.model().num_questions() }))
}

pub fn router(store: Arc<SessionStore>) -> Router {
    Router::new()
        .route("/healthz", get(healthz))
        .route("/sessions", post(create))
        .route("/sessions/{id}", get(session))
        .route("/sessions/{id}/next", get(next))
        .route("/sessions/{id}/responses", post(respond))
        .route("/sessions/{id}/predictions", get(predictions))
        .route("/sessions/{id}/end", post(end))
        .with_state(store)
}
