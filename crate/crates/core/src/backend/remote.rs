//! JSON-over-HTTP forwarding of the backend contract.
//!
//! An adapter process hosting a real model exposes
//!
//! * `GET  {base}/descriptor` → [`BackendDescriptor`]
//! * `POST {base}/generate`   ← [`GenerateRequest`] → [`GenerationResult`]
//! * `POST {base}/capture`    ← [`CaptureRequest`]  → [`CaptureBundle`]
//!
//! Failures come back as a non-2xx status with an [`ErrorBody`] whose `error`
//! is a [`BackendError::code`].

use std::time::Duration;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{Deserialize, Serialize};

use crate::imaging::ImageBuffer;
use crate::prompt::SpecializedPrompt;

use super::{
    BackendDescriptor, BackendError, CaptureBundle, CaptureMode, GenerationResult, TokenSpan,
    VisionLanguageBackend,
};

/// Raw RGB8 pixels, base64 encoded.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImagePayload {
    pub width: u32,
    pub height: u32,
    pub rgb_base64: String,
}

impl ImagePayload {
    pub fn encode(image: &ImageBuffer) -> Self {
        Self {
            width: image.width(),
            height: image.height(),
            rgb_base64: STANDARD.encode(image.pixels()),
        }
    }

    pub fn decode(&self) -> Result<ImageBuffer, BackendError> {
        let bytes = STANDARD
            .decode(&self.rgb_base64)
            .map_err(|e| BackendError::InvalidPrompt(format!("image payload is not base64: {e}")))?;
        ImageBuffer::new(self.width, self.height, bytes)
            .map_err(|e| BackendError::InvalidPrompt(format!("image payload: {e}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerateRequest {
    pub image: ImagePayload,
    pub prompt: SpecializedPrompt,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaptureRequest {
    pub image: ImagePayload,
    pub prompt: SpecializedPrompt,
    pub generation: GenerationResult,
    pub span: TokenSpan,
    pub mode: CaptureMode,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
    pub message: String,
}

impl From<&BackendError> for ErrorBody {
    fn from(e: &BackendError) -> Self {
        Self { error: e.code().to_string(), message: e.to_string() }
    }
}

impl ErrorBody {
    /// Best-effort reconstruction of the typed error.
    pub fn into_error(self) -> BackendError {
        match self.error.as_str() {
            "generation_failed" => BackendError::GenerationFailed(self.message),
            "no_json_in_output" => BackendError::NoJsonInOutput,
            "field_not_in_output" => BackendError::FieldNotInOutput(self.message),
            "span_empty" => BackendError::SpanEmpty,
            "backend_no_gradients" => BackendError::BackendNoGradients(self.message),
            "invalid_prompt" => BackendError::InvalidPrompt(self.message),
            "span_out_of_range" => BackendError::GenerationFailed(self.message),
            _ => BackendError::Transport(format!("{}: {}", self.error, self.message)),
        }
    }
}

pub struct RemoteBackend {
    base_url: String,
    http: reqwest::blocking::Client,
    descriptor: BackendDescriptor,
}

impl RemoteBackend {
    /// Fetches and validates the adapter's descriptor.
    pub fn connect(base_url: &str, timeout: Duration) -> Result<Self, BackendError> {
        let http = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        let base_url = base_url.trim_end_matches('/').to_string();
        let response = http
            .get(format!("{base_url}/descriptor"))
            .send()
            .map_err(|e| BackendError::Transport(format!("{base_url}: {e}")))?;
        let descriptor: BackendDescriptor = read_json(response)?;
        descriptor.validate()?;
        Ok(Self { base_url, http, descriptor })
    }

    pub fn base_url(&self) -> &str {
        &self.base_url
    }

    fn post<Q: Serialize, R: for<'de> Deserialize<'de>>(&self, path: &str, body: &Q) -> Result<R, BackendError> {
        let response = self
            .http
            .post(format!("{}/{path}", self.base_url))
            .json(body)
            .send()
            .map_err(|e| BackendError::Transport(format!("{}/{path}: {e}", self.base_url)))?;
        read_json(response)
    }
}

fn read_json<R: for<'de> Deserialize<'de>>(response: reqwest::blocking::Response) -> Result<R, BackendError> {
    let status = response.status();
    let body = response.text().map_err(|e| BackendError::Transport(e.to_string()))?;
    if !status.is_success() {
        return Err(match serde_json::from_str::<ErrorBody>(&body) {
            Ok(err) => err.into_error(),
            Err(_) => BackendError::Transport(format!("status {status}: {}", excerpt(&body))),
        });
    }
    serde_json::from_str(&body).map_err(|e| BackendError::Transport(format!("undecodable reply: {e}: {}", excerpt(&body))))
}

fn excerpt(body: &str) -> String {
    body.chars().take(200).collect()
}

impl VisionLanguageBackend for RemoteBackend {
    fn descriptor(&self) -> &BackendDescriptor {
        &self.descriptor
    }

    fn generate(&self, image: &ImageBuffer, prompt: &SpecializedPrompt) -> Result<GenerationResult, BackendError> {
        self.post(
            "generate",
            &GenerateRequest { image: ImagePayload::encode(image), prompt: prompt.clone() },
        )
    }

    fn capture(
        &self,
        image: &ImageBuffer,
        prompt: &SpecializedPrompt,
        gen: &GenerationResult,
        span: TokenSpan,
        mode: CaptureMode,
    ) -> Result<CaptureBundle, BackendError> {
        self.post(
            "capture",
            &CaptureRequest {
                image: ImagePayload::encode(image),
                prompt: prompt.clone(),
                generation: gen.clone(),
                span,
                mode,
            },
        )
    }
}
