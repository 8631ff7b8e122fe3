//! One field, one method: locate the value span, capture, build the map,
//! normalize it and bring it to image resolution.

use ndarray::Array2;
use thiserror::Error;

use crate::backend::{
    capture_explanation_signals, locate_value_span, BackendError, CaptureMode, GenerationResult,
    TokenSpan, VisionLanguageBackend,
};
use crate::imaging::{upsample_bilinear, ImageBuffer, TissueMask};
use crate::prompt::SpecializedPrompt;
use crate::report::ReportField;
use crate::xai::{focus_consistency, method_map, normalize_map, ExplanationMethod, XaiError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExplainError {
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Xai(#[from] XaiError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct FieldExplanation {
    pub field: ReportField,
    pub method: ExplanationMethod,
    pub span: TokenSpan,
    pub span_text: String,
    /// Raw map at grid (CAMs) or model-input (guided Grad-CAM) resolution.
    pub raw: Array2<f64>,
    /// Normalized map at image resolution: max is exactly 1, or the map is all zeros.
    pub map01: Array2<f64>,
}

impl FieldExplanation {
    pub fn focus_score(&self, mask: &TissueMask) -> Result<f64, XaiError> {
        focus_consistency(self.map01.view(), mask)
    }
}

pub fn explain_field(
    backend: &dyn VisionLanguageBackend,
    image: &ImageBuffer,
    prompt: &SpecializedPrompt,
    gen: &GenerationResult,
    field: ReportField,
    method: ExplanationMethod,
) -> Result<FieldExplanation, ExplainError> {
    let span = locate_value_span(gen, field)?;
    let standard = capture_explanation_signals(backend, image, prompt, gen, span, CaptureMode::Standard)?;
    let guided = if method.needs_guided_capture() {
        Some(capture_explanation_signals(backend, image, prompt, gen, span, CaptureMode::Guided)?)
    } else {
        None
    };
    let raw = method_map(method, &standard, guided.as_ref())?;
    let normalized = normalize_map(raw.view())?;
    let (h, w) = image.dims();
    let upsampled = upsample_bilinear(normalized.view(), h, w).map_err(|_| XaiError::DimensionMismatch {
        expected: (h, w),
        actual: normalized.dim(),
    })?;
    // interpolation rarely lands on a cell center, so rescale to restore max = 1
    let map01 = normalize_map(upsampled.view())?;
    Ok(FieldExplanation { field, method, span, span_text: gen.span_text(span), raw, map01 })
}
