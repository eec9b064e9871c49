//! HTTP routes.

use std::path::Path;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path as UrlPath, Query, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use pinview_core::session::{FeedbackEvent, SessionConfig};
use serde::Deserialize;

use crate::error::ServiceError;
use crate::state::{AppState, CorpusInfo, FeedbackResponse, SessionView};

pub const IDEMPOTENCY_HEADER: &str = "idempotency-key";

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/api/corpora", get(list_corpora))
        .route("/api/sessions", post(create_session))
        .route("/api/sessions/{id}", get(get_session))
        .route("/api/sessions/{id}/feedback", post(submit_feedback))
        .route("/api/sessions/{id}/summary", get(get_summary))
        .route("/assets/{image}", get(get_asset))
        .with_state(state)
}

fn parse_json<T: for<'de> Deserialize<'de>>(body: &[u8]) -> Result<T, ServiceError> {
    serde_json::from_slice(body).map_err(|e| ServiceError::BadRequest(format!("invalid request body: {e}")))
}

/// Runs CPU-bound session work off the async executor.
async fn blocking<T: Send + 'static>(
    f: impl FnOnce() -> Result<T, ServiceError> + Send + 'static,
) -> Result<T, ServiceError> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ServiceError::Internal(e.to_string()))?
}

async fn list_corpora(State(state): State<Arc<AppState>>) -> Json<Vec<CorpusInfo>> {
    Json(state.corpora())
}

async fn create_session(
    State(state): State<Arc<AppState>>,
    body: Bytes,
) -> Result<(StatusCode, Json<SessionView>), ServiceError> {
    let raw: serde_json::Value = parse_json(&body)?;
    let seed_given = raw.get("seed").is_some_and(|s| !s.is_null());
    let config: SessionConfig =
        serde_json::from_value(raw).map_err(|e| ServiceError::BadRequest(format!("invalid session config: {e}")))?;
    let view = blocking(move || state.create_session(config, seed_given)).await?;
    Ok((StatusCode::CREATED, Json(view)))
}

async fn get_session(State(state): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> Result<Json<SessionView>, ServiceError> {
    Ok(Json(state.session_view(&id)?))
}

async fn submit_feedback(
    State(state): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
    headers: HeaderMap,
    body: Bytes,
) -> Result<Json<FeedbackResponse>, ServiceError> {
    let event: FeedbackEvent = parse_json(&body)?;
    let key = match headers.get(IDEMPOTENCY_HEADER) {
        Some(v) => Some(
            v.to_str()
                .map_err(|_| ServiceError::BadRequest("idempotency key must be visible ASCII".into()))?
                .to_string(),
        ),
        None => None,
    };
    let response = blocking(move || state.submit_feedback(&id, event, key)).await?;
    Ok(Json(response))
}

async fn get_summary(
    State(state): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
) -> Result<Json<pinview_core::session::SessionSummary>, ServiceError> {
    Ok(Json(state.summary(&id)?))
}

#[derive(Debug, Deserialize)]
struct AssetQuery {
    corpus: Option<String>,
}

fn content_type(path: &Path) -> &'static str {
    match path
        .extension()
        .and_then(|e| e.to_str())
        .map(|e| e.to_ascii_lowercase())
        .as_deref()
    {
        Some("png") => "image/png",
        Some("jpg") | Some("jpeg") => "image/jpeg",
        Some("gif") => "image/gif",
        Some("bmp") => "image/bmp",
        _ => "application/octet-stream",
    }
}

async fn get_asset(
    State(state): State<Arc<AppState>>,
    UrlPath(image): UrlPath<String>,
    Query(query): Query<AssetQuery>,
) -> Result<Response, ServiceError> {
    let corpus = match &query.corpus {
        Some(name) => state
            .corpus(name)
            .ok_or_else(|| ServiceError::NotFound(format!("unknown corpus `{name}`")))?,
        None => state
            .sole_corpus()
            .ok_or_else(|| ServiceError::BadRequest("the `corpus` query parameter is required".into()))?,
    };
    let record = corpus
        .image(&image)
        .ok_or_else(|| ServiceError::NotFound(format!("unknown image `{image}`")))?;
    let path = Path::new(&record.source).to_path_buf();
    let bytes = tokio::fs::read(&path)
        .await
        .map_err(|_| ServiceError::NotFound(format!("no stored file for image `{image}`")))?;
    Ok((
        [
            (header::CONTENT_TYPE, content_type(&path)),
            (header::CACHE_CONTROL, "public, max-age=86400"),
        ],
        bytes,
    )
        .into_response())
}
