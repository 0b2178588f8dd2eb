//! HTTP inference service.
//!
//! | method | path       | body                         | success                 |
//! |--------|------------|------------------------------|-------------------------|
//! | POST   | `/predict` | PNG or JPEG bytes, ≤ 10 MiB  | 200, `PredictResponse`  |
//! | GET    | `/health`  | none                         | 200, `{status, model_version}` |
//!
//! `/predict` answers 415 unless the content type is `image/png` or
//! `image/jpeg`, 400 for an empty, oversized or undecodable body, and 500
//! with an opaque `error_id` for anything else. Every response carries
//! permissive CORS headers.

use std::future::Future;
use std::sync::Arc;

use aquasight::pipeline::{Classifier, PipelineError, PredictResponse};
use axum::body::{to_bytes, Body};
use axum::extract::State;
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Serialize;
use tokio::net::TcpListener;
use tower_http::cors::CorsLayer;

/// Largest accepted `/predict` body.
pub const MAX_BODY_BYTES: usize = 10 * 1024 * 1024;

pub const ACCEPTED_TYPES: [&str; 2] = ["image/png", "image/jpeg"];

#[derive(Clone)]
pub struct AppState {
    classifier: Arc<Classifier>,
    normalize: bool,
}

impl AppState {
    pub fn new(classifier: Classifier, normalize: bool) -> Self {
        Self {
            classifier: Arc::new(classifier),
            normalize,
        }
    }

    pub fn model_version(&self) -> &str {
        self.classifier.version()
    }
}

#[derive(Debug, Serialize)]
pub struct Health<'a> {
    pub status: &'static str,
    pub model_version: &'a str,
}

#[derive(Debug, Serialize)]
struct ErrorBody {
    error: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    error_id: Option<String>,
}

fn reject(status: StatusCode, error: impl Into<String>) -> Response {
    (status, Json(ErrorBody { error: error.into(), error_id: None })).into_response()
}

fn internal(detail: impl std::fmt::Display) -> Response {
    let id = uuid::Uuid::new_v4().to_string();
    log::error!("request {id} failed: {detail}");
    (
        StatusCode::INTERNAL_SERVER_ERROR,
        Json(ErrorBody {
            error: "internal error".into(),
            error_id: Some(id),
        }),
    )
        .into_response()
}

fn content_type_ok(headers: &HeaderMap) -> bool {
    headers
        .get(header::CONTENT_TYPE)
        .and_then(|v| v.to_str().ok())
        .map(|v| v.split(';').next().unwrap_or("").trim().to_ascii_lowercase())
        .is_some_and(|essence| ACCEPTED_TYPES.contains(&essence.as_str()))
}

async fn predict(State(state): State<AppState>, headers: HeaderMap, body: Body) -> Response {
    if !content_type_ok(&headers) {
        return reject(
            StatusCode::UNSUPPORTED_MEDIA_TYPE,
            format!("content type must be one of {}", ACCEPTED_TYPES.join(", ")),
        );
    }
    let bytes = match to_bytes(body, MAX_BODY_BYTES).await {
        Ok(b) => b,
        Err(_) => return reject(StatusCode::BAD_REQUEST, format!("body unreadable or larger than {MAX_BODY_BYTES} bytes")),
    };
    if bytes.is_empty() {
        return reject(StatusCode::BAD_REQUEST, "empty body");
    }
    let classifier = Arc::clone(&state.classifier);
    let normalize = state.normalize;
    let outcome = tokio::task::spawn_blocking(move || classifier.predict_bytes(&bytes, normalize)).await;
    match outcome {
        Ok(Ok(response)) => Json::<PredictResponse>(response).into_response(),
        Ok(Err(PipelineError::Input(e))) => reject(StatusCode::BAD_REQUEST, format!("undecodable image: {e}")),
        Ok(Err(e)) => internal(e),
        Err(e) => internal(e),
    }
}

async fn health(State(state): State<AppState>) -> Response {
    Json(Health {
        status: "ok",
        model_version: state.model_version(),
    })
    .into_response()
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/predict", post(predict))
        .route("/health", get(health))
        .layer(CorsLayer::permissive())
        .with_state(state)
}

/// Serves on an already bound listener until `shutdown` resolves.
pub async fn serve(listener: TcpListener, state: AppState, shutdown: impl Future<Output = ()> + Send + 'static) -> std::io::Result<()> {
    axum::serve(listener, router(state)).with_graceful_shutdown(shutdown).await
}
