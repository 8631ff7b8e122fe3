//! Vision-language backend contract.
//!
//! A backend does three things: describe itself, generate a report by greedy
//! decoding, and run one targeted backward pass that captures activations and
//! gradients at its final vision layer. [`toy::ToyBackend`] implements the
//! contract natively; [`remote::RemoteBackend`] forwards it over HTTP to an
//! adapter hosting a real model.

mod queue;
pub mod remote;
pub mod toy;

use ndarray::Array3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::imaging::ImageBuffer;
use crate::prompt::SpecializedPrompt;
use crate::report::{json_block_range, object_value_range, ReportField};

pub use queue::{FifoGate, FifoGuard, QueuedBackend};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum BackendError {
    #[error("generation failed: {0}")]
    GenerationFailed(String),
    #[error("generated text contains no JSON object")]
    NoJsonInOutput,
    #[error("field `{0}` not found in generated output")]
    FieldNotInOutput(String),
    #[error("field value is empty")]
    SpanEmpty,
    #[error("token span {start}..{end} out of range for {len} tokens")]
    SpanOutOfRange { start: usize, end: usize, len: usize },
    #[error("backend does not provide gradients: {0}")]
    BackendNoGradients(String),
    #[error("invalid prompt: {0}")]
    InvalidPrompt(String),
    #[error("backend transport error: {0}")]
    Transport(String),
}

impl BackendError {
    /// Stable machine-readable code, used on the wire.
    pub fn code(&self) -> &'static str {
        match self {
            Self::GenerationFailed(_) => "generation_failed",
            Self::NoJsonInOutput => "no_json_in_output",
            Self::FieldNotInOutput(_) => "field_not_in_output",
            Self::SpanEmpty => "span_empty",
            Self::SpanOutOfRange { .. } => "span_out_of_range",
            Self::BackendNoGradients(_) => "backend_no_gradients",
            Self::InvalidPrompt(_) => "invalid_prompt",
            Self::Transport(_) => "transport",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackendDescriptor {
    pub name: String,
    /// `(H, W)` of the pixel tensor the model consumes.
    pub input_size: (usize, usize),
    /// `(h, w)` of the target layer's spatial grid.
    pub grid: (usize, usize),
    pub channels: usize,
    pub vocab_size: usize,
    pub target_layer: String,
}

impl BackendDescriptor {
    pub fn validate(&self) -> Result<(), BackendError> {
        let (ih, iw) = self.input_size;
        let (gh, gw) = self.grid;
        if ih == 0 || iw == 0 || gh == 0 || gw == 0 || self.channels == 0 || self.vocab_size == 0 {
            return Err(BackendError::Transport(format!("descriptor has a zero dimension: {self:?}")));
        }
        if gh * gw < 4 {
            return Err(BackendError::Transport(format!("grid {gh}x{gw} has fewer than 4 cells")));
        }
        Ok(())
    }
}

/// Output of greedy decoding. `offsets` are character (not byte) ranges into
/// `text`, contiguous and in order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationResult {
    pub token_ids: Vec<u32>,
    pub text: String,
    pub offsets: Vec<(usize, usize)>,
    pub logprobs: Vec<f64>,
}

impl GenerationResult {
    pub fn len(&self) -> usize {
        self.token_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.token_ids.is_empty()
    }

    pub fn check_invariants(&self) -> Result<(), BackendError> {
        let n = self.token_ids.len();
        if self.offsets.len() != n || self.logprobs.len() != n {
            return Err(BackendError::GenerationFailed("per-token arrays differ in length".into()));
        }
        let mut cursor = 0;
        for &(start, end) in &self.offsets {
            if start != cursor || end < start {
                return Err(BackendError::GenerationFailed("token offsets are not contiguous".into()));
            }
            cursor = end;
        }
        if cursor != self.text.chars().count() {
            return Err(BackendError::GenerationFailed("token offsets do not cover the text".into()));
        }
        if self.logprobs.iter().any(|&lp| lp.is_nan() || lp > 0.0) {
            return Err(BackendError::GenerationFailed("log-probability above zero or NaN".into()));
        }
        Ok(())
    }

    /// Decoded text of the tokens in `span`.
    pub fn span_text(&self, span: TokenSpan) -> String {
        let from = self.offsets[span.start].0;
        let to = self.offsets[span.end - 1].1;
        self.text.chars().skip(from).take(to - from).collect()
    }
}

/// Half-open token index range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TokenSpan {
    pub start: usize,
    pub end: usize,
}

impl TokenSpan {
    pub fn new(start: usize, end: usize, token_count: usize) -> Result<Self, BackendError> {
        if start >= end || end > token_count {
            return Err(BackendError::SpanOutOfRange { start, end, len: token_count });
        }
        Ok(Self { start, end })
    }

    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.start >= self.end
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CaptureMode {
    Standard,
    /// Rectifier backward passes are gated on both input and gradient sign.
    Guided,
}

/// Signals from one targeted backward pass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaptureBundle {
    /// `(channels, h, w)` target-layer activations.
    pub activations: Array3<f64>,
    /// `(channels, h, w)` gradient of the span loss w.r.t. the activations.
    pub layer_gradients: Array3<f64>,
    /// `(H, W, 3)` gradient of the span loss w.r.t. the input pixel tensor.
    pub input_gradients: Array3<f64>,
    pub mode: CaptureMode,
    /// Sum of the span's teacher-forced log-probabilities.
    pub loss: f64,
    /// Teacher-forced log-probability of each span token.
    pub span_logprobs: Vec<f64>,
}

impl CaptureBundle {
    pub fn check_against(&self, desc: &BackendDescriptor) -> Result<(), BackendError> {
        let layer = (desc.channels, desc.grid.0, desc.grid.1);
        let input = (desc.input_size.0, desc.input_size.1, 3);
        if self.activations.dim() != layer || self.layer_gradients.dim() != layer {
            return Err(BackendError::BackendNoGradients(format!(
                "layer tensors {:?}/{:?}, expected {layer:?}",
                self.activations.dim(),
                self.layer_gradients.dim()
            )));
        }
        if self.input_gradients.dim() != input {
            return Err(BackendError::BackendNoGradients(format!(
                "input gradients {:?}, expected {input:?}",
                self.input_gradients.dim()
            )));
        }
        let finite = self
            .activations
            .iter()
            .chain(self.layer_gradients.iter())
            .chain(self.input_gradients.iter())
            .all(|v| v.is_finite());
        if !finite {
            return Err(BackendError::BackendNoGradients("non-finite values in capture".into()));
        }
        Ok(())
    }
}

pub trait VisionLanguageBackend: Send + Sync {
    fn descriptor(&self) -> &BackendDescriptor;

    /// Greedy decoding: argmax at every step, ties to the lowest token id.
    fn generate(&self, image: &ImageBuffer, prompt: &SpecializedPrompt) -> Result<GenerationResult, BackendError>;

    /// Teacher-forces `gen`, sums the log-probabilities of the tokens in
    /// `span` and back-propagates once. Implementations must leave the model
    /// in inference configuration whether or not this succeeds.
    fn capture(
        &self,
        image: &ImageBuffer,
        prompt: &SpecializedPrompt,
        gen: &GenerationResult,
        span: TokenSpan,
        mode: CaptureMode,
    ) -> Result<CaptureBundle, BackendError>;
}

impl<T: VisionLanguageBackend + ?Sized> VisionLanguageBackend for std::sync::Arc<T> {
    fn descriptor(&self) -> &BackendDescriptor {
        (**self).descriptor()
    }

    fn generate(&self, image: &ImageBuffer, prompt: &SpecializedPrompt) -> Result<GenerationResult, BackendError> {
        (**self).generate(image, prompt)
    }

    fn capture(
        &self,
        image: &ImageBuffer,
        prompt: &SpecializedPrompt,
        gen: &GenerationResult,
        span: TokenSpan,
        mode: CaptureMode,
    ) -> Result<CaptureBundle, BackendError> {
        (**self).capture(image, prompt, gen, span, mode)
    }
}

/// Runs greedy generation and checks the result carries a JSON object.
pub fn generate_report(
    backend: &dyn VisionLanguageBackend,
    image: &ImageBuffer,
    prompt: &SpecializedPrompt,
) -> Result<GenerationResult, BackendError> {
    let missing = prompt.missing_keys();
    if !missing.is_empty() {
        return Err(BackendError::InvalidPrompt(format!("missing keys: {}", missing.join(", "))));
    }
    let gen = backend.generate(image, prompt)?;
    gen.check_invariants()?;
    if json_block_range(&gen.text).is_none() {
        return Err(BackendError::NoJsonInOutput);
    }
    Ok(gen)
}

/// Minimal token span covering the value of `field` in the first JSON object
/// of the generated text. String values exclude their quotes.
pub fn locate_value_span(gen: &GenerationResult, field: ReportField) -> Result<TokenSpan, BackendError> {
    let not_found = || BackendError::FieldNotInOutput(field.key().to_string());
    let block = json_block_range(&gen.text).ok_or_else(not_found)?;
    let value = object_value_range(&gen.text[block.clone()], field.key()).ok_or_else(not_found)?;
    let char_start = gen.text[..block.start + value.start].chars().count();
    let char_end = char_start + gen.text[block.start + value.start..block.start + value.end].chars().count();
    if char_start == char_end {
        return Err(BackendError::SpanEmpty);
    }
    let start = gen
        .offsets
        .iter()
        .position(|&(_, end)| end > char_start)
        .ok_or_else(not_found)?;
    let end = gen
        .offsets
        .iter()
        .rposition(|&(s, _)| s < char_end)
        .ok_or_else(not_found)?
        + 1;
    TokenSpan::new(start, end, gen.len())
}

/// Validates the span, then delegates to the backend and checks the shapes
/// of what comes back.
pub fn capture_explanation_signals(
    backend: &dyn VisionLanguageBackend,
    image: &ImageBuffer,
    prompt: &SpecializedPrompt,
    gen: &GenerationResult,
    span: TokenSpan,
    mode: CaptureMode,
) -> Result<CaptureBundle, BackendError> {
    TokenSpan::new(span.start, span.end, gen.len())?;
    let bundle = backend.capture(image, prompt, gen, span, mode)?;
    bundle.check_against(backend.descriptor())?;
    if bundle.mode != mode {
        return Err(BackendError::BackendNoGradients(format!(
            "requested {mode:?} capture, backend returned {:?}",
            bundle.mode
        )));
    }
    Ok(bundle)
}
