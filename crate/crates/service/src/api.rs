//! Axum routes for the workbench. Every pipeline call runs on the blocking
//! pool because backends and chat clients are synchronous.

use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, Multipart, Path, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::ServiceError;
use crate::session::{AnalysisSession, ExplanationRecord};
use crate::store::{HEATMAP_DIR, INPAINTED_FILE, ORIGINAL_FILE};
use crate::workbench::Workbench;

const MAX_UPLOAD_BYTES: usize = 64 * 1024 * 1024;

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        let status = StatusCode::from_u16(self.http_status()).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        (status, Json(json!({"error": self.code(), "message": self.to_string()}))).into_response()
    }
}

/// Session plus the URLs a client needs to fetch its images.
#[derive(Debug, Serialize)]
pub struct SessionView {
    #[serde(flatten)]
    pub session: AnalysisSession,
    pub original_url: String,
    pub inpainted_url: Option<String>,
    pub explanation_urls: Vec<String>,
}

impl From<AnalysisSession> for SessionView {
    fn from(session: AnalysisSession) -> Self {
        let base = format!("/api/sessions/{}", session.id);
        Self {
            original_url: format!("{base}/image/{ORIGINAL_FILE}"),
            inpainted_url: session.inpainted_ref.as_ref().map(|_| format!("{base}/image/{INPAINTED_FILE}")),
            explanation_urls: session.explanations.iter().map(|e| format!("{base}/{}", e.overlay_ref)).collect(),
            session,
        }
    }
}

#[derive(Debug, Serialize)]
pub struct ExplanationView {
    #[serde(flatten)]
    pub record: ExplanationRecord,
    pub image_url: String,
    pub map_url: String,
}

#[derive(Debug, Deserialize)]
pub struct ExplainRequest {
    pub field: String,
    pub method: String,
}

pub fn router(workbench: Arc<Workbench>) -> Router {
    Router::new()
        .route("/api/health", get(health))
        .route("/api/sessions", get(list_sessions).post(create_session))
        .route("/api/sessions/{id}", get(get_session))
        .route("/api/sessions/{id}/prompt", post(run_prompt))
        .route("/api/sessions/{id}/analyze", post(run_analysis))
        .route("/api/sessions/{id}/explanations", post(run_explanation))
        .route("/api/sessions/{id}/image/{file}", get(get_image))
        .route("/api/sessions/{id}/heatmaps/{file}", get(get_heatmap))
        .layer(DefaultBodyLimit::max(MAX_UPLOAD_BYTES))
        .with_state(workbench)
}

async fn blocking<T: Send + 'static>(
    f: impl FnOnce() -> Result<T, ServiceError> + Send + 'static,
) -> Result<T, ServiceError> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ServiceError::Storage(format!("worker panicked: {e}")))?
}

async fn health(State(wb): State<Arc<Workbench>>) -> Json<serde_json::Value> {
    Json(json!({"status": "ok", "backend": wb.backend_name()}))
}

async fn list_sessions(State(wb): State<Arc<Workbench>>) -> Result<impl IntoResponse, ServiceError> {
    Ok(Json(blocking(move || wb.list_sessions()).await?))
}

async fn get_session(
    State(wb): State<Arc<Workbench>>,
    Path(id): Path<String>,
) -> Result<Json<SessionView>, ServiceError> {
    Ok(Json(blocking(move || wb.get_session(&id)).await?.into()))
}

fn parse_flag(text: &str) -> Result<bool, ServiceError> {
    match text.trim().to_ascii_lowercase().as_str() {
        "" | "0" | "false" | "off" | "no" => Ok(false),
        "1" | "true" | "on" | "yes" => Ok(true),
        other => Err(ServiceError::InvalidRequest(format!("inpainting flag `{other}` is not a boolean"))),
    }
}

/// Multipart fields: `image` (file), `query` (text), `inpainting` (flag).
async fn create_session(
    State(wb): State<Arc<Workbench>>,
    mut form: Multipart,
) -> Result<(StatusCode, Json<SessionView>), ServiceError> {
    let bad = |e: axum::extract::multipart::MultipartError| ServiceError::InvalidRequest(e.body_text());
    let mut image: Option<Bytes> = None;
    let mut query = String::new();
    let mut inpainting = false;
    while let Some(field) = form.next_field().await.map_err(bad)? {
        match field.name().unwrap_or_default() {
            "image" => image = Some(field.bytes().await.map_err(bad)?),
            "query" => query = field.text().await.map_err(bad)?,
            "inpainting" | "inpainting_enabled" => inpainting = parse_flag(&field.text().await.map_err(bad)?)?,
            _ => {}
        }
    }
    let image = image.ok_or_else(|| ServiceError::InvalidRequest("missing `image` part".into()))?;
    let session = blocking(move || wb.create_session(&image, &query, inpainting)).await?;
    Ok((StatusCode::CREATED, Json(session.into())))
}

async fn run_prompt(
    State(wb): State<Arc<Workbench>>,
    Path(id): Path<String>,
) -> Result<Json<SessionView>, ServiceError> {
    Ok(Json(blocking(move || wb.run_prompt_stage(&id)).await?.into()))
}

async fn run_analysis(
    State(wb): State<Arc<Workbench>>,
    Path(id): Path<String>,
) -> Result<Json<SessionView>, ServiceError> {
    Ok(Json(blocking(move || wb.run_analysis_stage(&id)).await?.into()))
}

async fn run_explanation(
    State(wb): State<Arc<Workbench>>,
    Path(id): Path<String>,
    body: Bytes,
) -> Result<(StatusCode, Json<ExplanationView>), ServiceError> {
    let request: ExplainRequest =
        serde_json::from_slice(&body).map_err(|e| ServiceError::InvalidRequest(e.to_string()))?;
    let session_id = id.clone();
    let record = blocking(move || wb.run_explanation(&session_id, &request.field, &request.method)).await?;
    let base = format!("/api/sessions/{id}");
    let view = ExplanationView {
        image_url: format!("{base}/{}", record.overlay_ref),
        map_url: format!("{base}/{}", record.map_ref),
        record,
    };
    Ok((StatusCode::CREATED, Json(view)))
}

async fn get_image(
    State(wb): State<Arc<Workbench>>,
    Path((id, file)): Path<(String, String)>,
) -> Result<Response, ServiceError> {
    if file != ORIGINAL_FILE && file != INPAINTED_FILE {
        return Err(ServiceError::NotFound(file));
    }
    let bytes = blocking(move || wb.store().read_artifact(&id, &file)).await?;
    Ok(([(header::CONTENT_TYPE, "image/png")], bytes).into_response())
}

async fn get_heatmap(
    State(wb): State<Arc<Workbench>>,
    Path((id, file)): Path<(String, String)>,
) -> Result<Response, ServiceError> {
    let (stem, content_type) = if let Some(stem) = file.strip_suffix(".png") {
        (stem, "image/png")
    } else if let Some(stem) = file.strip_suffix(".hlmap") {
        (stem, "application/octet-stream")
    } else {
        return Err(ServiceError::NotFound(file));
    };
    if stem.is_empty() || !stem.bytes().all(|b| b.is_ascii_digit()) {
        return Err(ServiceError::NotFound(file));
    }
    let relative = format!("{HEATMAP_DIR}/{file}");
    let bytes = blocking(move || wb.store().read_artifact(&id, &relative)).await?;
    Ok(([(header::CONTENT_TYPE, content_type)], bytes).into_response())
}
