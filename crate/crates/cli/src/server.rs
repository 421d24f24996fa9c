//! HTTP front end of the session service.

use std::path::Path;
use std::sync::Arc;

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path as UrlPath, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use dashlab::session::SessionService;
use dashlab::{Error, SCHEMA_VERSION};
use serde::{Deserialize, Serialize};
use tower_http::services::ServeDir;

type Service = Arc<SessionService>;

#[derive(Debug, Serialize)]
#[serde(rename_all = "camelCase")]
struct ErrorBody {
    schema_version: u32,
    error: &'static str,
    message: String,
}

/// An error rendered as a JSON body with a status code.
#[derive(Debug)]
pub struct ApiError(StatusCode, &'static str, String);

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let (status, kind) = match &e {
            Error::NotFound(_) => (StatusCode::NOT_FOUND, "not_found"),
            Error::Conflict(_) => (StatusCode::CONFLICT, "conflict"),
            Error::Gone(_) => (StatusCode::GONE, "gone"),
            Error::Validation(_) | Error::Domain(_) => (StatusCode::UNPROCESSABLE_ENTITY, "validation"),
            Error::Config(_) => (StatusCode::BAD_REQUEST, "bad_request"),
            _ => (StatusCode::INTERNAL_SERVER_ERROR, "internal"),
        };
        ApiError(status, kind, e.to_string())
    }
}

impl From<JsonRejection> for ApiError {
    fn from(e: JsonRejection) -> Self {
        ApiError(StatusCode::BAD_REQUEST, "bad_request", e.body_text())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = ErrorBody { schema_version: SCHEMA_VERSION, error: self.1, message: self.2 };
        (self.0, Json(body)).into_response()
    }
}

#[derive(Debug, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
struct CreateRequest {
    experiment_id: String,
    #[serde(default)]
    assignment_seed: Option<u64>,
}

#[derive(Debug, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
struct BidRequest {
    trialnum: u32,
    bid: f64,
}

#[derive(Debug, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
struct RationaleRequest {
    text: String,
}

/// Session operations write and fsync the log, so they run off the
/// async workers.
async fn blocking<T, F>(service: Service, f: F) -> Result<T, ApiError>
where
    T: Send + 'static,
    F: FnOnce(&SessionService) -> dashlab::Result<T> + Send + 'static,
{
    tokio::task::spawn_blocking(move || f(&service))
        .await
        .map_err(|e| ApiError(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))?
        .map_err(ApiError::from)
}

async fn create(
    State(service): State<Service>,
    body: Result<Json<CreateRequest>, JsonRejection>,
) -> Result<impl IntoResponse, ApiError> {
    let Json(req) = body?;
    let created = blocking(service, move |s| s.create_session(&req.experiment_id, req.assignment_seed)).await?;
    Ok((StatusCode::CREATED, Json(created)))
}

async fn trial(State(service): State<Service>, UrlPath(id): UrlPath<String>) -> Result<impl IntoResponse, ApiError> {
    Ok(Json(blocking(service, move |s| s.get_trial(&id)).await?))
}

async fn bid(
    State(service): State<Service>,
    UrlPath(id): UrlPath<String>,
    body: Result<Json<BidRequest>, JsonRejection>,
) -> Result<impl IntoResponse, ApiError> {
    let Json(req) = body?;
    Ok(Json(blocking(service, move |s| s.submit_bid(&id, req.trialnum, req.bid)).await?))
}

async fn rationale(
    State(service): State<Service>,
    UrlPath(id): UrlPath<String>,
    body: Result<Json<RationaleRequest>, JsonRejection>,
) -> Result<impl IntoResponse, ApiError> {
    let Json(req) = body?;
    Ok(Json(blocking(service, move |s| s.submit_rationale(&id, &req.text)).await?))
}

async fn export(State(service): State<Service>, UrlPath(id): UrlPath<String>) -> Result<impl IntoResponse, ApiError> {
    Ok(Json(blocking(service, move |s| s.export(&id)).await?))
}

/// API routes, plus static files from `static_dir` for every other path.
pub fn router(service: Service, static_dir: Option<&Path>) -> Router {
    let api = Router::new()
        .route("/sessions", post(create))
        .route("/sessions/{id}/trial", get(trial))
        .route("/sessions/{id}/bid", post(bid))
        .route("/sessions/{id}/rationale", post(rationale))
        .route("/sessions/{id}/export", get(export))
        .with_state(service);
    match static_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api,
    }
}
