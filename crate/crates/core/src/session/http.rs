//! JSON-over-HTTP routes for [`SessionManager`]. Every error is returned as
//! `{"code": ..., "message": ...}`.

use std::sync::Arc;

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};

use super::{DayView, OrderRequest, OrderResult, SessionDescriptor, SessionManager, SessionSummary, AUTO_CONDITION};
use crate::error::Error;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CreateSessionRequest {
    #[serde(default = "auto")]
    pub condition: String,
    #[serde(default)]
    pub seed: Option<u64>,
}

fn auto() -> String {
    AUTO_CONDITION.to_string()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConditionList {
    pub conditions: Vec<String>,
}

pub struct ApiError(StatusCode, ErrorBody);

impl ApiError {
    fn new(status: StatusCode, code: &str, message: impl Into<String>) -> Self {
        Self(
            status,
            ErrorBody {
                code: code.to_string(),
                message: message.into(),
            },
        )
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let (status, code) = match &e {
            Error::NotFound(_) => (StatusCode::NOT_FOUND, "not_found"),
            Error::Conflict(_) => (StatusCode::CONFLICT, "conflict"),
            Error::RejectedOrder(_) => (StatusCode::UNPROCESSABLE_ENTITY, "order_rejected"),
            Error::Io { .. } | Error::Divergence { .. } => (StatusCode::INTERNAL_SERVER_ERROR, "internal"),
            _ => (StatusCode::BAD_REQUEST, "invalid_request"),
        };
        Self::new(status, code, e.to_string())
    }
}

impl From<JsonRejection> for ApiError {
    fn from(e: JsonRejection) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "invalid_request", e.body_text())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(self.1)).into_response()
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;
type Shared = State<Arc<SessionManager>>;

pub fn router(manager: Arc<SessionManager>) -> Router {
    Router::new()
        .route("/conditions", get(conditions))
        .route("/sessions", post(create))
        .route("/sessions/{id}", get(descriptor))
        .route("/sessions/{id}/day", get(day))
        .route("/sessions/{id}/order", post(order))
        .route("/sessions/{id}/summary", get(summary))
        .route("/sessions/{id}/log", get(log))
        .fallback(|| async { ApiError::new(StatusCode::NOT_FOUND, "not_found", "no such route") })
        .with_state(manager)
}

async fn conditions(State(m): Shared) -> Json<ConditionList> {
    Json(ConditionList {
        conditions: m.condition_ids(),
    })
}

async fn create(
    State(m): Shared,
    body: Result<Json<CreateSessionRequest>, JsonRejection>,
) -> Result<(StatusCode, Json<SessionDescriptor>), ApiError> {
    let Json(req) = body?;
    Ok((StatusCode::CREATED, Json(m.create(&req.condition, req.seed)?)))
}

async fn descriptor(State(m): Shared, Path(id): Path<String>) -> ApiResult<SessionDescriptor> {
    Ok(Json(m.descriptor(&id)?))
}

async fn day(State(m): Shared, Path(id): Path<String>) -> ApiResult<DayView> {
    Ok(Json(m.day_view(&id)?))
}

async fn order(
    State(m): Shared,
    Path(id): Path<String>,
    body: Result<Json<OrderRequest>, JsonRejection>,
) -> ApiResult<OrderResult> {
    let Json(req) = body?;
    Ok(Json(m.submit_order(&id, req)?))
}

async fn summary(State(m): Shared, Path(id): Path<String>) -> ApiResult<SessionSummary> {
    Ok(Json(m.summary(&id)?))
}

async fn log(State(m): Shared, Path(id): Path<String>) -> Result<Response, ApiError> {
    let body = m.log_jsonl(&id)?;
    Ok(([(header::CONTENT_TYPE, "application/x-ndjson")], body).into_response())
}
