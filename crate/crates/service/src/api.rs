//! HTTP/JSON API.
//!
//! - `POST /documents` with `{text, tables?}` returns `{document_id, passages, cache_hit}`.
//! - `POST /analyze/{dimension}` with `{document_id}` or `{text, tables?}` returns an analysis.
//! - `GET /report/{document_id}` returns the completeness report.
//!
//! Errors are `{"error": message}`; a backend failure during analysis
//! answers 502 with the partial analysis under `"partial"`.

use std::sync::Arc;

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use datadoc_core::{Dimension, RawInput};
use serde::Serialize;

use crate::service::{AnalyzeRequest, AnalyzeResponse, DocumentResponse, Service, ServiceError};

#[derive(Debug, Serialize)]
pub struct ErrorBody {
    pub error: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub partial: Option<AnalyzeResponse>,
}

pub struct ApiError(StatusCode, ErrorBody);

impl ApiError {
    fn new(status: StatusCode, error: impl ToString) -> Self {
        ApiError(status, ErrorBody { error: error.to_string(), partial: None })
    }
}

impl From<ServiceError> for ApiError {
    fn from(e: ServiceError) -> Self {
        let status = match &e {
            ServiceError::EmptyText | ServiceError::BadRequest(_) => StatusCode::BAD_REQUEST,
            ServiceError::UnknownDimension(_) | ServiceError::UnknownDocument(_) => StatusCode::NOT_FOUND,
            ServiceError::NotAnalyzed(_) => StatusCode::CONFLICT,
            ServiceError::Backend(_) => StatusCode::BAD_GATEWAY,
            ServiceError::Cache(_) | ServiceError::Config(_) => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError::new(status, e)
    }
}

impl From<JsonRejection> for ApiError {
    fn from(e: JsonRejection) -> Self {
        ApiError::new(StatusCode::BAD_REQUEST, e.body_text())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(self.1)).into_response()
    }
}

pub fn router(service: Arc<Service>) -> Router {
    Router::new()
        .route("/documents", post(post_document))
        .route("/analyze/{dimension}", post(analyze))
        .route("/report/{document_id}", get(report))
        .with_state(service)
}

/// The pipeline is blocking (backend calls included), so it runs off the
/// async workers.
async fn blocking<T: Send + 'static>(
    f: impl FnOnce() -> Result<T, ServiceError> + Send + 'static,
) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, format!("worker failed: {e}")))?
        .map_err(ApiError::from)
}

async fn post_document(
    State(service): State<Arc<Service>>,
    body: Result<Json<RawInput>, JsonRejection>,
) -> Result<Json<DocumentResponse>, ApiError> {
    let Json(input) = body?;
    let ingested = blocking(move || service.ingest(&input)).await?;
    Ok(Json(DocumentResponse {
        document_id: ingested.prepared.document.id.clone(),
        passages: ingested.prepared.document.passages.len(),
        cache_hit: ingested.cache_hit,
    }))
}

async fn analyze(
    State(service): State<Arc<Service>>,
    Path(dimension): Path<String>,
    body: Result<Json<AnalyzeRequest>, JsonRejection>,
) -> Result<Json<AnalyzeResponse>, ApiError> {
    let dimension: Dimension =
        dimension.parse().map_err(|e: datadoc_core::dimensions::UnknownDimension| ServiceError::UnknownDimension(e.to_string()))?;
    let Json(request) = body?;
    let response = blocking(move || service.analyze(dimension, &request)).await?;
    match &response.record.error {
        Some(failure) => Err(ApiError(
            StatusCode::BAD_GATEWAY,
            ErrorBody {
                error: format!("step {} failed: {}", failure.step, failure.message),
                partial: Some(response),
            },
        )),
        None => Ok(Json(response)),
    }
}

async fn report(
    State(service): State<Arc<Service>>,
    Path(document_id): Path<String>,
) -> Result<Json<datadoc_core::CompletenessReport>, ApiError> {
    Ok(Json(blocking(move || service.report(&document_id)).await?))
}
