use std::fmt;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use stainscope_core::xai::ExplanationMethod;
use stainscope_core::{ReportField, SpecializedPrompt, StainReport, TokenSpan};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SessionStatus {
    Created,
    Prompted,
    Analyzed,
    Failed,
}

impl fmt::Display for SessionStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Created => "created",
            Self::Prompted => "prompted",
            Self::Analyzed => "analyzed",
            Self::Failed => "failed",
        })
    }
}

/// Text of the generation and its length; the full token record lives in
/// `generation.json` beside the session.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerationDigest {
    pub text: String,
    pub token_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplanationRecord {
    pub index: usize,
    pub field: ReportField,
    pub method: ExplanationMethod,
    pub span: TokenSpan,
    pub span_text: String,
    /// Overlay PNG, relative to the session directory.
    pub overlay_ref: String,
    /// Normalized map file, relative to the session directory.
    pub map_ref: String,
    /// `None` when no tissue mask could be computed for the original.
    pub focus_score: Option<f64>,
    pub created_at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FailureRecord {
    pub stage: String,
    pub code: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisSession {
    pub id: String,
    pub created_at: DateTime<Utc>,
    pub updated_at: DateTime<Utc>,
    pub status: SessionStatus,
    pub query: String,
    pub inpainting_enabled: bool,
    pub image_ref: String,
    pub inpainted_ref: Option<String>,
    pub specialized_prompt: Option<SpecializedPrompt>,
    /// The prompt as sent to the vision-language model.
    pub prompt_text: Option<String>,
    pub prompt_retry_count: Option<u32>,
    pub report: Option<StainReport>,
    pub report_warnings: Vec<String>,
    pub generation: Option<GenerationDigest>,
    pub explanations: Vec<ExplanationRecord>,
    pub error: Option<FailureRecord>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionSummary {
    pub id: String,
    pub created_at: DateTime<Utc>,
    pub status: SessionStatus,
    pub query: String,
}

impl AnalysisSession {
    pub fn summary(&self) -> SessionSummary {
        SessionSummary {
            id: self.id.clone(),
            created_at: self.created_at,
            status: self.status,
            query: self.query.clone(),
        }
    }
}
