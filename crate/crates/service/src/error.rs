use stainscope_core::explain::ExplainError;
use stainscope_core::{BackendError, ImageError, PromptError, ReportError, XaiError};
use thiserror::Error;

use crate::session::SessionStatus;

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("image could not be decoded: {0}")]
    CorruptImage(String),
    #[error("unsupported image format: {0}")]
    UnsupportedFormat(String),
    #[error("query is empty")]
    EmptyQuery,
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("session `{0}` not found")]
    NotFound(String),
    #[error("session is {actual}, operation requires {expected}")]
    WrongState { expected: SessionStatus, actual: SessionStatus },
    #[error("prompt synthesis failed: {0}")]
    SynthesisFailed(String),
    #[error("chat client error: {0}")]
    Client(String),
    #[error("no tissue found in image")]
    NoTissueFound,
    #[error("generation failed: {0}")]
    GenerationFailed(String),
    #[error("model output is not a valid report: {0}")]
    ReportInvalid(String),
    #[error("unknown report field `{0}`")]
    UnknownField(String),
    #[error("field `{0}` not found in generated output")]
    FieldNotInOutput(String),
    #[error("unsupported explanation method `{0}`")]
    UnsupportedMethod(String),
    #[error("explanation failed: {0}")]
    ExplanationFailed(String),
    #[error("backend error: {0}")]
    Backend(String),
    #[error("storage error: {0}")]
    Storage(String),
}

impl ServiceError {
    pub fn code(&self) -> &'static str {
        match self {
            Self::CorruptImage(_) => "corrupt_image",
            Self::UnsupportedFormat(_) => "unsupported_format",
            Self::EmptyQuery => "empty_query",
            Self::InvalidRequest(_) => "invalid_request",
            Self::NotFound(_) => "not_found",
            Self::WrongState { .. } => "wrong_state",
            Self::SynthesisFailed(_) => "synthesis_failed",
            Self::Client(_) => "client_error",
            Self::NoTissueFound => "no_tissue_found",
            Self::GenerationFailed(_) => "generation_failed",
            Self::ReportInvalid(_) => "report_invalid",
            Self::UnknownField(_) => "unknown_field",
            Self::FieldNotInOutput(_) => "field_not_in_output",
            Self::UnsupportedMethod(_) => "unsupported_method",
            Self::ExplanationFailed(_) => "explanation_failed",
            Self::Backend(_) => "backend_error",
            Self::Storage(_) => "storage_error",
        }
    }

    /// HTTP status for the JSON error body.
    pub fn http_status(&self) -> u16 {
        match self {
            Self::CorruptImage(_)
            | Self::UnsupportedFormat(_)
            | Self::EmptyQuery
            | Self::InvalidRequest(_)
            | Self::NoTissueFound
            | Self::UnknownField(_)
            | Self::FieldNotInOutput(_)
            | Self::UnsupportedMethod(_) => 400,
            Self::NotFound(_) => 404,
            Self::WrongState { .. } => 409,
            Self::SynthesisFailed(_)
            | Self::Client(_)
            | Self::GenerationFailed(_)
            | Self::ReportInvalid(_)
            | Self::ExplanationFailed(_)
            | Self::Backend(_) => 502,
            Self::Storage(_) => 500,
        }
    }
}

impl From<ImageError> for ServiceError {
    fn from(e: ImageError) -> Self {
        match e {
            ImageError::UnsupportedFormat(m) => Self::UnsupportedFormat(m),
            ImageError::CorruptImage(m) => Self::CorruptImage(m),
            ImageError::NoTissueFound => Self::NoTissueFound,
            other => Self::InvalidRequest(other.to_string()),
        }
    }
}

impl From<PromptError> for ServiceError {
    fn from(e: PromptError) -> Self {
        match e {
            PromptError::EmptyQuery => Self::EmptyQuery,
            PromptError::Client(c) => Self::Client(c.to_string()),
            PromptError::SynthesisFailed(m) => Self::SynthesisFailed(m),
        }
    }
}

impl From<BackendError> for ServiceError {
    fn from(e: BackendError) -> Self {
        match e {
            BackendError::FieldNotInOutput(f) => Self::FieldNotInOutput(f),
            BackendError::GenerationFailed(_) | BackendError::NoJsonInOutput => Self::GenerationFailed(e.to_string()),
            other => Self::Backend(other.to_string()),
        }
    }
}

impl From<ReportError> for ServiceError {
    fn from(e: ReportError) -> Self {
        Self::ReportInvalid(e.to_string())
    }
}

impl From<XaiError> for ServiceError {
    fn from(e: XaiError) -> Self {
        Self::ExplanationFailed(e.to_string())
    }
}

impl From<ExplainError> for ServiceError {
    fn from(e: ExplainError) -> Self {
        match e {
            ExplainError::Backend(BackendError::FieldNotInOutput(f)) => Self::FieldNotInOutput(f),
            ExplainError::Backend(b) => Self::ExplanationFailed(b.to_string()),
            ExplainError::Xai(x) => x.into(),
        }
    }
}

impl From<std::io::Error> for ServiceError {
    fn from(e: std::io::Error) -> Self {
        Self::Storage(e.to_string())
    }
}

impl From<serde_json::Error> for ServiceError {
    fn from(e: serde_json::Error) -> Self {
        Self::Storage(e.to_string())
    }
}
