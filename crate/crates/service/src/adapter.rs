//! Server side of the remote backend protocol: hosts any backend so that
//! `RemoteBackend` clients can reach it over HTTP.

use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::de::DeserializeOwned;
use stainscope_core::backend::remote::{CaptureRequest, ErrorBody, GenerateRequest};
use stainscope_core::{BackendError, VisionLanguageBackend};

type Shared = Arc<dyn VisionLanguageBackend>;

pub fn adapter_router(backend: Shared) -> Router {
    Router::new()
        .route("/descriptor", get(descriptor))
        .route("/generate", post(generate))
        .route("/capture", post(capture))
        .layer(DefaultBodyLimit::max(256 * 1024 * 1024))
        .with_state(backend)
}

fn error_response(e: &BackendError) -> Response {
    let status = match e {
        BackendError::InvalidPrompt(_) | BackendError::SpanOutOfRange { .. } | BackendError::SpanEmpty => {
            StatusCode::UNPROCESSABLE_ENTITY
        }
        _ => StatusCode::INTERNAL_SERVER_ERROR,
    };
    (status, Json(ErrorBody::from(e))).into_response()
}

fn parse<T: DeserializeOwned>(body: &[u8]) -> Result<T, BackendError> {
    serde_json::from_slice(body).map_err(|e| BackendError::InvalidPrompt(format!("malformed request: {e}")))
}

async fn descriptor(State(backend): State<Shared>) -> Response {
    Json(backend.descriptor().clone()).into_response()
}

async fn generate(State(backend): State<Shared>, body: Bytes) -> Response {
    let result = tokio::task::spawn_blocking(move || {
        let req: GenerateRequest = parse(&body)?;
        backend.generate(&req.image.decode()?, &req.prompt)
    })
    .await;
    match result {
        Ok(Ok(gen)) => Json(gen).into_response(),
        Ok(Err(e)) => error_response(&e),
        Err(e) => error_response(&BackendError::GenerationFailed(e.to_string())),
    }
}

async fn capture(State(backend): State<Shared>, body: Bytes) -> Response {
    let result = tokio::task::spawn_blocking(move || {
        let req: CaptureRequest = parse(&body)?;
        backend.capture(&req.image.decode()?, &req.prompt, &req.generation, req.span, req.mode)
    })
    .await;
    match result {
        Ok(Ok(bundle)) => Json(bundle).into_response(),
        Ok(Err(e)) => error_response(&e),
        Err(e) => error_response(&BackendError::BackendNoGradients(e.to_string())),
    }
}
