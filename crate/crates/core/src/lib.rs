//! Core algorithms for explainable vision-language review of
//! immunohistochemistry slides.
//!
//! The crate is organised as a pipeline:
//!
//! - [`imaging`]: decoding, tissue detection, ROI in-painting, resampling and
//!   heatmap overlays.
//! - [`report`]: the structured stain report, its canonical serialization and
//!   validation of model output.
//! - [`prompt`]: meta-prompt construction and the chat-completion clients used
//!   to synthesize a specialized analysis prompt from a clinician query.
//! - [`backend`]: the vision-language backend contract (greedy generation,
//!   token-span targeting, gradient capture) and a deterministic toy backend.
//! - [`xai`]: Grad-CAM, Grad-CAM++, HiResCAM, guided backpropagation and the
//!   focus-consistency score.
//! - [`explain`]: the per-field explanation pipeline built from the above.

pub mod backend;
pub mod explain;
pub mod fixtures;
pub mod imaging;
pub mod prompt;
pub mod report;
pub mod xai;

pub use backend::{
    capture_explanation_signals, generate_report, locate_value_span, BackendDescriptor,
    BackendError, CaptureBundle, CaptureMode, GenerationResult, QueuedBackend, TokenSpan,
    VisionLanguageBackend,
};
pub use backend::toy::{make_toy_backend, ToyBackend, ToySpec};
pub use explain::{explain_field, ExplainError, FieldExplanation};
pub use imaging::{
    apply_roi_inpainting, compute_tissue_mask, decode_image, render_overlay, upsample_bilinear,
    ImageBuffer, ImageError, ImageFormatHint, MaskParams, TissueMask,
};
pub use prompt::{
    build_meta_prompt, synthesize_prompt, ChatClient, ChatClientConfig, ChatError, ChatMessage,
    MetaPrompt, PromptError, Role, SpecializedPrompt, Synthesis,
};
pub use report::{
    extract_json_block, resolve_field_value, validate_report, PercentRange, ReportError,
    ReportField, StainLocation, StainReport, StainType, ValidatedReport,
};
pub use xai::{
    focus_consistency, grad_cam, grad_cam_pp, guided_backprop_saliency, guided_grad_cam,
    hires_cam, normalize_map, ExplanationMethod, Heatmap, SaliencyMap, XaiError,
};
