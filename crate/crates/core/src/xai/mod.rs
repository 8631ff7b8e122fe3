//! Explanation maps computed from a [`CaptureBundle`]: Grad-CAM, Grad-CAM++,
//! HiResCAM, guided backpropagation and guided Grad-CAM, plus min-max
//! normalization and the focus-consistency score.

mod hlmap;

use std::fmt;
use std::str::FromStr;

use ndarray::{Array2, ArrayView2, Axis, Zip};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{CaptureBundle, CaptureMode};
use crate::imaging::{upsample_bilinear, TissueMask};

pub use hlmap::{decode_hlmap, encode_hlmap, HLMAP_HEADER_LEN, HLMAP_MAGIC};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum XaiError {
    #[error("capture was taken in {actual:?} mode, {expected:?} required")]
    WrongMode { expected: CaptureMode, actual: CaptureMode },
    #[error("Grad-CAM++ weights are not finite")]
    NonFiniteWeights,
    #[error("map contains non-finite values")]
    NonFiniteInput,
    #[error("map is not normalized to [0, 1]")]
    NotNormalized,
    #[error("dimension mismatch: expected {expected:?}, got {actual:?}")]
    DimensionMismatch { expected: (usize, usize), actual: (usize, usize) },
    #[error("invalid map file: {0}")]
    InvalidMapFile(String),
}

/// The four methods a reviewer can request.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ExplanationMethod {
    #[serde(rename = "gradcam")]
    GradCam,
    #[serde(rename = "gradcampp")]
    GradCamPp,
    #[serde(rename = "hirescam")]
    HiResCam,
    #[serde(rename = "guided_gradcam")]
    GuidedGradCam,
}

impl ExplanationMethod {
    pub const ALL: [ExplanationMethod; 4] = [Self::GradCam, Self::GradCamPp, Self::HiResCam, Self::GuidedGradCam];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::GradCam => "gradcam",
            Self::GradCamPp => "gradcampp",
            Self::HiResCam => "hirescam",
            Self::GuidedGradCam => "guided_gradcam",
        }
    }

    /// Guided Grad-CAM needs a second, guided-mode capture.
    pub fn needs_guided_capture(self) -> bool {
        self == Self::GuidedGradCam
    }
}

impl fmt::Display for ExplanationMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ExplanationMethod {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key = s.trim().to_ascii_lowercase().replace(['-', ' '], "_");
        match key.as_str() {
            "gradcam" | "grad_cam" => Ok(Self::GradCam),
            "gradcampp" | "gradcam++" | "grad_cam++" | "grad_cam_pp" => Ok(Self::GradCamPp),
            "hirescam" | "hires_cam" => Ok(Self::HiResCam),
            "guided_gradcam" | "guided_grad_cam" => Ok(Self::GuidedGradCam),
            _ => Err(format!("unknown explanation method `{s}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CamSource {
    GradCam,
    GradCamPp,
    HiResCam,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SaliencySource {
    GuidedBp,
    GuidedGradCam,
}

/// Grid-resolution class-activation map.
#[derive(Debug, Clone, PartialEq)]
pub struct Heatmap {
    pub values: Array2<f64>,
    pub normalized: bool,
    pub source: CamSource,
}

/// Pixel-resolution map.
#[derive(Debug, Clone, PartialEq)]
pub struct SaliencyMap {
    pub values: Array2<f64>,
    pub normalized: bool,
    pub source: SaliencySource,
}

impl Heatmap {
    pub fn normalize(&self) -> Result<Heatmap, XaiError> {
        Ok(Heatmap { values: normalize_map(self.values.view())?, normalized: true, source: self.source })
    }
}

impl SaliencyMap {
    pub fn normalize(&self) -> Result<SaliencyMap, XaiError> {
        Ok(SaliencyMap { values: normalize_map(self.values.view())?, normalized: true, source: self.source })
    }
}

fn require_mode(bundle: &CaptureBundle, expected: CaptureMode) -> Result<(), XaiError> {
    if bundle.mode != expected {
        return Err(XaiError::WrongMode { expected, actual: bundle.mode });
    }
    Ok(())
}

/// `Σ_k w_k · A^k`, rectified.
fn weighted_sum(bundle: &CaptureBundle, weights: &[f64]) -> Array2<f64> {
    let (_, h, w) = bundle.activations.dim();
    let mut map = Array2::<f64>::zeros((h, w));
    for (a, &wk) in bundle.activations.outer_iter().zip(weights) {
        map.scaled_add(wk, &a);
    }
    map.mapv_inplace(|v| v.max(0.0));
    map
}

/// Mean computed around the first element, so a constant input returns that
/// constant bit-for-bit.
fn shifted_mean<'a>(values: impl Iterator<Item = &'a f64>) -> f64 {
    let mut values = values.peekable();
    let Some(&first) = values.peek().copied() else {
        return 0.0;
    };
    let (n, sum) = values.fold((0usize, 0.0), |(n, s), v| (n + 1, s + (v - first)));
    first + sum / n as f64
}

/// `α_k` = spatial mean of `G^k`; map = `max(0, Σ_k α_k·A^k)`.
pub fn grad_cam(bundle: &CaptureBundle) -> Result<Heatmap, XaiError> {
    require_mode(bundle, CaptureMode::Standard)?;
    let alphas: Vec<f64> = bundle.layer_gradients.outer_iter().map(|g| shifted_mean(g.iter())).collect();
    Ok(Heatmap { values: weighted_sum(bundle, &alphas), normalized: false, source: CamSource::GradCam })
}

/// Per cell `α = g² / (2g² + ΣA·g³)` with 0/0 → 0; `w_k = Σ α·max(0, g)`;
/// map = `max(0, Σ_k w_k·A^k)`.
pub fn grad_cam_pp(bundle: &CaptureBundle) -> Result<Heatmap, XaiError> {
    require_mode(bundle, CaptureMode::Standard)?;
    let mut weights = Vec::with_capacity(bundle.activations.len_of(Axis(0)));
    for (a, g) in bundle.activations.outer_iter().zip(bundle.layer_gradients.outer_iter()) {
        let mass = a.sum();
        let wk: f64 = g
            .iter()
            .map(|&g| {
                let num = g * g;
                let den = 2.0 * g * g + mass * g * g * g;
                let alpha = if num == 0.0 && den == 0.0 { 0.0 } else { num / den };
                alpha * g.max(0.0)
            })
            .sum();
        if !wk.is_finite() {
            return Err(XaiError::NonFiniteWeights);
        }
        weights.push(wk);
    }
    Ok(Heatmap { values: weighted_sum(bundle, &weights), normalized: false, source: CamSource::GradCamPp })
}

/// map = `max(0, Σ_k G^k ⊙ A^k)`.
pub fn hires_cam(bundle: &CaptureBundle) -> Result<Heatmap, XaiError> {
    require_mode(bundle, CaptureMode::Standard)?;
    let (_, h, w) = bundle.activations.dim();
    let mut map = Array2::<f64>::zeros((h, w));
    for (a, g) in bundle.activations.outer_iter().zip(bundle.layer_gradients.outer_iter()) {
        Zip::from(&mut map).and(&a).and(&g).for_each(|m, &a, &g| *m += a * g);
    }
    map.mapv_inplace(|v| v.max(0.0));
    Ok(Heatmap { values: map, normalized: false, source: CamSource::HiResCam })
}

/// Per pixel maximum over channels of `|∂L/∂pixel|`, for a capture of any mode.
pub fn gradient_saliency(bundle: &CaptureBundle) -> Array2<f64> {
    bundle
        .input_gradients
        .map_axis(Axis(2), |px| px.iter().fold(0.0_f64, |m, v| m.max(v.abs())))
}

pub fn guided_backprop_saliency(bundle: &CaptureBundle) -> Result<SaliencyMap, XaiError> {
    require_mode(bundle, CaptureMode::Guided)?;
    Ok(SaliencyMap { values: gradient_saliency(bundle), normalized: false, source: SaliencySource::GuidedBp })
}

/// Upsamples the CAM to `image_size` and multiplies it into the saliency.
pub fn guided_grad_cam(
    cam: &Heatmap,
    saliency: &SaliencyMap,
    image_size: (usize, usize),
) -> Result<SaliencyMap, XaiError> {
    if saliency.values.dim() != image_size {
        return Err(XaiError::DimensionMismatch { expected: image_size, actual: saliency.values.dim() });
    }
    let up = upsample_bilinear(cam.values.view(), image_size.0, image_size.1)
        .map_err(|_| XaiError::DimensionMismatch { expected: image_size, actual: cam.values.dim() })?;
    Ok(SaliencyMap { values: up * &saliency.values, normalized: false, source: SaliencySource::GuidedGradCam })
}

/// Min-max scaling to `[0, 1]`; a constant map becomes all zeros.
pub fn normalize_map(raw: ArrayView2<'_, f64>) -> Result<Array2<f64>, XaiError> {
    if raw.iter().any(|v| !v.is_finite()) {
        return Err(XaiError::NonFiniteInput);
    }
    let min = raw.iter().copied().fold(f64::INFINITY, f64::min);
    let max = raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if raw.is_empty() || max == min {
        return Ok(Array2::zeros(raw.dim()));
    }
    let range = max - min;
    Ok(raw.mapv(|v| ((v - min) / range).clamp(0.0, 1.0)))
}

/// Share of the map's mass that lies on tissue; 0 for an all-zero map.
pub fn focus_consistency(map01: ArrayView2<'_, f64>, mask: &TissueMask) -> Result<f64, XaiError> {
    if map01.dim() != mask.dims() {
        return Err(XaiError::DimensionMismatch { expected: mask.dims(), actual: map01.dim() });
    }
    if map01.iter().any(|v| !v.is_finite()) {
        return Err(XaiError::NonFiniteInput);
    }
    if map01.iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(XaiError::NotNormalized);
    }
    let mut inside = 0.0;
    let mut total = 0.0;
    for (&v, &tissue) in map01.iter().zip(mask.bits()) {
        total += v;
        if tissue {
            inside += v;
        }
    }
    Ok(if total == 0.0 { 0.0 } else { (inside / total).clamp(0.0, 1.0) })
}

/// Raw map for `method` from a standard capture, plus a guided capture when
/// the method needs one. Grid maps stay at grid resolution; guided Grad-CAM
/// comes back at model-input resolution.
pub fn method_map(
    method: ExplanationMethod,
    standard: &CaptureBundle,
    guided: Option<&CaptureBundle>,
) -> Result<Array2<f64>, XaiError> {
    Ok(match method {
        ExplanationMethod::GradCam => grad_cam(standard)?.values,
        ExplanationMethod::GradCamPp => grad_cam_pp(standard)?.values,
        ExplanationMethod::HiResCam => hires_cam(standard)?.values,
        ExplanationMethod::GuidedGradCam => {
            let guided = guided.ok_or(XaiError::WrongMode {
                expected: CaptureMode::Guided,
                actual: CaptureMode::Standard,
            })?;
            let saliency = guided_backprop_saliency(guided)?;
            let dim = saliency.values.dim();
            guided_grad_cam(&grad_cam(standard)?, &saliency, dim)?.values
        }
    })
}
