//! `/v1` HTTP/JSON routes.

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use docqa_core::conversion::FormatHint;
use docqa_core::library::LibraryError;
use docqa_core::orchestrator::OrchestratorError;
use docqa_core::qa::QaError;
use serde::Deserialize;
use serde_json::json;

use crate::app::App;

#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub message: String,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self { status, message: message.into() }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({ "error": self.message }))).into_response()
    }
}

impl From<QaError> for ApiError {
    fn from(e: QaError) -> Self {
        let status = match &e {
            QaError::UnknownDocument(_) => StatusCode::NOT_FOUND,
            QaError::EmptyText | QaError::Config(_) => StatusCode::BAD_REQUEST,
            QaError::RemoteUnavailable(_) | QaError::RemoteMalformed(_) => StatusCode::BAD_GATEWAY,
            QaError::Timeout => StatusCode::GATEWAY_TIMEOUT,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        Self::new(status, e.to_string())
    }
}

impl From<LibraryError> for ApiError {
    fn from(e: LibraryError) -> Self {
        let status = match &e {
            LibraryError::UnknownDocument(_) => StatusCode::NOT_FOUND,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        Self::new(status, e.to_string())
    }
}

pub fn router(app: App) -> Router {
    Router::new()
        .route("/v1/documents", post(submit).get(list))
        .route("/v1/documents/{doc_id}", get(document))
        .route("/v1/documents/{doc_id}/ask", post(ask))
        .route("/v1/tasks/{task_id}", get(task))
        .with_state(app)
}

#[derive(Deserialize)]
struct SubmitQuery {
    format: Option<String>,
}

async fn submit(
    State(app): State<App>,
    Query(query): Query<SubmitQuery>,
    body: Bytes,
) -> Result<impl IntoResponse, ApiError> {
    let format = match query.format.as_deref() {
        Some(name) => FormatHint::parse(name).ok_or_else(|| {
            ApiError::new(StatusCode::UNSUPPORTED_MEDIA_TYPE, format!("unknown format {name:?}"))
        })?,
        None => FormatHint::sniff(&body),
    };
    if body.is_empty() {
        return Err(ApiError::new(StatusCode::BAD_REQUEST, "empty body"));
    }
    let task_id = app.orchestrator.submit(&body, format);
    Ok((StatusCode::ACCEPTED, Json(json!({ "task_id": task_id }))))
}

async fn task(State(app): State<App>, Path(task_id): Path<String>) -> Result<impl IntoResponse, ApiError> {
    app.orchestrator.status(&task_id).map(Json).map_err(|e| match e {
        OrchestratorError::UnknownTask(_) => ApiError::new(StatusCode::NOT_FOUND, e.to_string()),
        other => ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, other.to_string()),
    })
}

async fn list(State(app): State<App>) -> impl IntoResponse {
    Json(app.library.list())
}

async fn document(State(app): State<App>, Path(doc_id): Path<String>) -> Result<Response, ApiError> {
    let bytes = app.library.document_bytes(&doc_id)?;
    Ok(([(header::CONTENT_TYPE, "application/json")], bytes).into_response())
}

#[derive(Deserialize)]
struct AskRequest {
    question: String,
    k: Option<usize>,
}

async fn ask(
    State(app): State<App>,
    Path(doc_id): Path<String>,
    Json(request): Json<AskRequest>,
) -> Result<impl IntoResponse, ApiError> {
    if request.question.trim().is_empty() {
        return Err(ApiError::new(StatusCode::BAD_REQUEST, "question is blank"));
    }
    if request.k == Some(0) {
        return Err(ApiError::new(StatusCode::BAD_REQUEST, "k must be positive"));
    }
    let answer = tokio::task::spawn_blocking(move || {
        app.qa.answer_in(&app.library, &doc_id, &request.question, request.k)
    })
    .await
    .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))??;
    Ok(Json(answer))
}
