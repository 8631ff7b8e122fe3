//! A desk-scale, bit-exact vision-language backend.
//!
//! Architecture:
//!
//! 1. resize to 32×32 (bilinear, half-pixel centers), channels scaled to `[0, 1]`;
//! 2. 4×4 stride-4 convolution, 3 → 8 channels, then a rectifier: this 8×8×8
//!    tensor is the target vision layer;
//! 3. global average pooling to an 8-dim feature `f`;
//! 4. per decoding step, `logits = W·[f ⊕ onehot(prev)] + b` plus a fixed
//!    steering bonus on the next byte of a report template.
//!
//! The template is the canonical serialization of a report whose grade is
//! `round(4·σ(f₀))` clamped to 0..=3, whose location is the argmax of
//! `f₁..f₄` and whose percentage bucket is `⌊10·tanh f₅⌋`. The steering bonus
//! exceeds the largest possible spread of the learned logits, so greedy
//! decoding always reproduces the template while every log-probability still
//! depends smoothly on `f` and therefore on the pixels.
//!
//! Weights come from a splitmix64 stream seeded by [`ToySpec::seed`]; each
//! weight is `u / 2⁶⁴ · 0.2 − 0.1` in the order conv weight
//! `[out][in][ky][kx]`, conv bias, output weight `[vocab][8 + vocab]`,
//! output bias.

use std::sync::atomic::{AtomicBool, Ordering};

use ndarray::{Array3, ArrayView3};

use crate::imaging::{resize_to_float, ImageBuffer};
use crate::prompt::SpecializedPrompt;
use crate::report::{PercentRange, StainLocation, StainReport, StainType};

use super::{
    BackendDescriptor, BackendError, CaptureBundle, CaptureMode, GenerationResult, TokenSpan,
    VisionLanguageBackend,
};

const INPUT: usize = 32;
const PATCH: usize = 4;
const GRID: usize = INPUT / PATCH;
const CHANNELS: usize = 8;
const VOCAB: usize = 64;
const DECODER_IN: usize = CHANNELS + VOCAB;
const STEER: f64 = 10.0;
const MAX_TOKENS: usize = 4096;

/// Token 0 ends generation and stands in as the "previous token" at step 0.
pub const EOS: u32 = 0;

/// Bytes for token ids `1..=63`.
const ALPHABET: &[u8; VOCAB - 1] =
    b"\n \",-.:{}_/'()0123456789abcdefghijklmnopqrstuvwxyzABDEFHIKLOPRT";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ToySpec {
    pub seed: u64,
}

impl ToySpec {
    pub const INPUT_SIZE: (usize, usize) = (INPUT, INPUT);
    pub const GRID: (usize, usize) = (GRID, GRID);
    pub const CHANNELS: usize = CHANNELS;
    pub const VOCAB: usize = VOCAB;

    pub fn new(seed: u64) -> Self {
        Self { seed }
    }
}

/// splitmix64 as published by Vigna.
#[derive(Debug, Clone)]
pub struct SplitMix64(u64);

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        Self(seed)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.0 = self.0.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.0;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    fn next_weight(&mut self) -> f64 {
        (self.next_u64() as f64 / 18_446_744_073_709_551_616.0) * 0.2 - 0.1
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyWeights {
    /// `[out][in][ky][kx]`, flattened.
    pub conv_weight: Vec<f64>,
    pub conv_bias: Vec<f64>,
    /// `[vocab][CHANNELS + vocab]`, flattened.
    pub out_weight: Vec<f64>,
    pub out_bias: Vec<f64>,
}

impl ToyWeights {
    fn generate(seed: u64) -> Self {
        let mut rng = SplitMix64::new(seed);
        let mut take = |n: usize| (0..n).map(|_| rng.next_weight()).collect::<Vec<_>>();
        let conv_weight = take(CHANNELS * 3 * PATCH * PATCH);
        let conv_bias = take(CHANNELS);
        let out_weight = take(VOCAB * DECODER_IN);
        let out_bias = take(VOCAB);
        Self { conv_weight, conv_bias, out_weight, out_bias }
    }

    fn conv(&self, out: usize, input: usize, ky: usize, kx: usize) -> f64 {
        self.conv_weight[((out * 3 + input) * PATCH + ky) * PATCH + kx]
    }

    fn out(&self, token: usize, column: usize) -> f64 {
        self.out_weight[token * DECODER_IN + column]
    }
}

/// Per-unit record of the rectifier's backward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct RectifierTrace {
    pub pre_activations: Array3<f64>,
    /// Gradient arriving at the rectifier output.
    pub grad_out: Array3<f64>,
    /// Gradient the rectifier passes back to its input.
    pub grad_in: Array3<f64>,
}

pub struct ToyBackend {
    spec: ToySpec,
    weights: ToyWeights,
    descriptor: BackendDescriptor,
    gradients_enabled: AtomicBool,
}

pub fn make_toy_backend(spec: ToySpec) -> ToyBackend {
    ToyBackend {
        spec,
        weights: ToyWeights::generate(spec.seed),
        descriptor: BackendDescriptor {
            name: format!("toy-{}", spec.seed),
            input_size: (INPUT, INPUT),
            grid: (GRID, GRID),
            channels: CHANNELS,
            vocab_size: VOCAB,
            target_layer: "vision.conv.relu".into(),
        },
        gradients_enabled: AtomicBool::new(false),
    }
}

/// Switches the backend into gradient mode until dropped.
struct GradientMode<'a>(&'a AtomicBool);

impl<'a> GradientMode<'a> {
    fn enter(flag: &'a AtomicBool) -> Self {
        flag.store(true, Ordering::SeqCst);
        Self(flag)
    }
}

impl Drop for GradientMode<'_> {
    fn drop(&mut self) {
        self.0.store(false, Ordering::SeqCst);
    }
}

pub fn token_for_byte(b: u8) -> Option<u32> {
    ALPHABET.iter().position(|&a| a == b).map(|i| i as u32 + 1)
}

pub fn byte_for_token(id: u32) -> Option<u8> {
    (id as usize).checked_sub(1).and_then(|i| ALPHABET.get(i)).copied()
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

impl ToyBackend {
    pub fn spec(&self) -> ToySpec {
        self.spec
    }

    pub fn weights(&self) -> &ToyWeights {
        &self.weights
    }

    /// False only while a capture is running.
    pub fn is_inference_mode(&self) -> bool {
        !self.gradients_enabled.load(Ordering::SeqCst)
    }

    /// `(32, 32, 3)` unit-range input tensor.
    pub fn prepare_input(&self, image: &ImageBuffer) -> Array3<f64> {
        resize_to_float(image, INPUT, INPUT)
    }

    /// `(8, 8, 8)` convolution output before the rectifier.
    pub fn pre_activations(&self, x: ArrayView3<'_, f64>) -> Array3<f64> {
        Array3::from_shape_fn((CHANNELS, GRID, GRID), |(k, i, j)| {
            let mut acc = self.weights.conv_bias[k];
            for c in 0..3 {
                for ky in 0..PATCH {
                    for kx in 0..PATCH {
                        acc += self.weights.conv(k, c, ky, kx) * x[[i * PATCH + ky, j * PATCH + kx, c]];
                    }
                }
            }
            acc
        })
    }

    pub fn activations(&self, x: ArrayView3<'_, f64>) -> Array3<f64> {
        self.pre_activations(x).mapv(|v| v.max(0.0))
    }

    /// Global average pool of the target layer.
    pub fn pool(&self, activations: ArrayView3<'_, f64>) -> [f64; CHANNELS] {
        let cells = (GRID * GRID) as f64;
        std::array::from_fn(|k| activations.index_axis(ndarray::Axis(0), k).sum() / cells)
    }

    pub fn features(&self, image: &ImageBuffer) -> [f64; CHANNELS] {
        let x = self.prepare_input(image);
        self.pool(self.activations(x.view()).view())
    }

    fn step_logits(&self, f: &[f64; CHANNELS], prev: u32, target: u32) -> [f64; VOCAB] {
        std::array::from_fn(|v| {
            let mut acc = self.weights.out_bias[v] + self.weights.out(v, CHANNELS + prev as usize);
            for (k, fk) in f.iter().enumerate() {
                acc += self.weights.out(v, k) * fk;
            }
            if v == target as usize {
                acc += STEER;
            }
            acc
        })
    }

    /// The report the decoder is steered towards for features `f`.
    pub fn template_report(&self, f: &[f64; CHANNELS], prompt: &SpecializedPrompt) -> StainReport {
        let grade = (4.0 * sigmoid(f[0])).round().clamp(0.0, 3.0) as u8;
        let mut location = 0;
        for i in 1..4 {
            if f[1 + i] > f[1 + location] {
                location = i;
            }
        }
        let location = StainLocation::ALL[location];
        let bucket = ((10.0 * f[5].tanh()).floor().clamp(0.0, 9.0)) as u8;
        let range = PercentRange::new(bucket * 10, bucket * 10 + 10).expect("bucket range is valid");
        let stain = stain_from_prompt(prompt);
        let intensity = ["absent", "weak", "moderate", "strong"][grade as usize];
        StainReport {
            stain_type: stain,
            percentage_of_cells_stained: range,
            staining_intensity_grade: Some(grade),
            type_of_cells_stained: "tumor cells".into(),
            staining_location_per_cell: location,
            report: format!(
                "{} staining is {intensity}, with {range} percent of tumor cells showing {} positivity.",
                stain.as_str(),
                location.as_str()
            ),
            explanation: "toy readout: feature 0 sets the grade, features 1 to 4 set the location, feature 5 sets the percentage."
                .into(),
        }
    }

    fn tokenize(text: &str) -> Result<Vec<u32>, BackendError> {
        text.bytes()
            .map(|b| {
                token_for_byte(b).ok_or_else(|| {
                    BackendError::GenerationFailed(format!("byte {b:#04x} is outside the toy alphabet"))
                })
            })
            .collect()
    }

    /// Teacher-forced span loss and its gradient w.r.t. the pooled feature.
    fn span_loss(&self, f: &[f64; CHANNELS], tokens: &[u32], span: TokenSpan) -> (f64, Vec<f64>, [f64; CHANNELS]) {
        let mut loss = 0.0;
        let mut logprobs = Vec::with_capacity(span.len());
        let mut grad_f = [0.0; CHANNELS];
        for t in span.start..span.end {
            let prev = if t == 0 { EOS } else { tokens[t - 1] };
            let target = tokens[t];
            let logits = self.step_logits(f, prev, target);
            let (lsm, probs) = log_softmax(&logits);
            loss += lsm[target as usize];
            logprobs.push(lsm[target as usize]);
            // d log p_t / d f = Σ_{v≠t} p_v (W_t − W_v); avoids forming 1 − p_t
            let t = target as usize;
            for (v, p) in probs.iter().enumerate().filter(|&(v, _)| v != t) {
                for (k, gk) in grad_f.iter_mut().enumerate() {
                    *gk += p * (self.weights.out(t, k) - self.weights.out(v, k));
                }
            }
        }
        (loss, logprobs, grad_f)
    }

    /// Span loss as a function of the target-layer activations.
    pub fn span_loss_from_activations(&self, activations: ArrayView3<'_, f64>, tokens: &[u32], span: TokenSpan) -> f64 {
        self.span_loss(&self.pool(activations), tokens, span).0
    }

    /// Span loss as a function of the input tensor.
    pub fn span_loss_from_input(&self, x: ArrayView3<'_, f64>, tokens: &[u32], span: TokenSpan) -> f64 {
        self.span_loss_from_activations(self.activations(x).view(), tokens, span)
    }

    /// [`VisionLanguageBackend::capture`] plus the rectifier's backward record.
    pub fn capture_traced(
        &self,
        image: &ImageBuffer,
        gen: &GenerationResult,
        span: TokenSpan,
        mode: CaptureMode,
    ) -> Result<(CaptureBundle, RectifierTrace), BackendError> {
        let _mode = GradientMode::enter(&self.gradients_enabled);

        TokenSpan::new(span.start, span.end, gen.len())?;
        if let Some(&bad) = gen.token_ids.iter().find(|&&t| t as usize >= VOCAB) {
            return Err(BackendError::GenerationFailed(format!("token id {bad} outside vocabulary")));
        }

        let x = self.prepare_input(image);
        let z = self.pre_activations(x.view());
        let a = z.mapv(|v| v.max(0.0));
        let f = self.pool(a.view());
        let (loss, span_logprobs, grad_f) = self.span_loss(&f, &gen.token_ids, span);

        let cells = (GRID * GRID) as f64;
        let grad_a = Array3::from_shape_fn((CHANNELS, GRID, GRID), |(k, _, _)| grad_f[k] / cells);
        let grad_z = Array3::from_shape_fn((CHANNELS, GRID, GRID), |idx| {
            let g = grad_a[idx];
            let open = z[idx] > 0.0 && (mode == CaptureMode::Standard || g > 0.0);
            if open {
                g
            } else {
                0.0
            }
        });

        let mut grad_x = Array3::<f64>::zeros((INPUT, INPUT, 3));
        for ((k, i, j), &g) in grad_z.indexed_iter() {
            if g == 0.0 {
                continue;
            }
            for c in 0..3 {
                for ky in 0..PATCH {
                    for kx in 0..PATCH {
                        grad_x[[i * PATCH + ky, j * PATCH + kx, c]] += g * self.weights.conv(k, c, ky, kx);
                    }
                }
            }
        }

        let bundle = CaptureBundle {
            activations: a,
            layer_gradients: grad_a.clone(),
            input_gradients: grad_x,
            mode,
            loss,
            span_logprobs,
        };
        let trace = RectifierTrace { pre_activations: z, grad_out: grad_a, grad_in: grad_z };
        Ok((bundle, trace))
    }
}

/// Analytic-versus-numeric comparison of the layer and input gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientCheck {
    pub layer_checked: usize,
    pub pixel_checked: usize,
    pub max_layer_rel_error: f64,
    pub max_pixel_rel_error: f64,
}

/// `|a − n| / max(|a|, |n|, 1e-12)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-12)
}

impl ToyBackend {
    /// Central differences with step `eps` over every target-layer unit and
    /// every `pixel_stride`-th input value.
    pub fn gradient_check(
        &self,
        image: &ImageBuffer,
        gen: &GenerationResult,
        span: TokenSpan,
        eps: f64,
        pixel_stride: usize,
    ) -> Result<GradientCheck, BackendError> {
        let (bundle, _) = self.capture_traced(image, gen, span, CaptureMode::Standard)?;
        let tokens = &gen.token_ids;

        let mut a = bundle.activations.clone();
        let mut max_layer = 0.0_f64;
        for idx in 0..a.len() {
            let cell = a.as_slice_mut().expect("owned arrays are contiguous");
            let orig = cell[idx];
            cell[idx] = orig + eps;
            let plus = self.span_loss_from_activations(a.view(), tokens, span);
            a.as_slice_mut().expect("contiguous")[idx] = orig - eps;
            let minus = self.span_loss_from_activations(a.view(), tokens, span);
            a.as_slice_mut().expect("contiguous")[idx] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            let analytic = bundle.layer_gradients.as_slice().expect("contiguous")[idx];
            max_layer = max_layer.max(relative_error(analytic, numeric));
        }

        let mut x = self.prepare_input(image);
        let mut max_pixel = 0.0_f64;
        let mut pixel_checked = 0;
        for idx in (0..x.len()).step_by(pixel_stride.max(1)) {
            let orig = x.as_slice().expect("contiguous")[idx];
            x.as_slice_mut().expect("contiguous")[idx] = orig + eps;
            let plus = self.span_loss_from_input(x.view(), tokens, span);
            x.as_slice_mut().expect("contiguous")[idx] = orig - eps;
            let minus = self.span_loss_from_input(x.view(), tokens, span);
            x.as_slice_mut().expect("contiguous")[idx] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            let analytic = bundle.input_gradients.as_slice().expect("contiguous")[idx];
            max_pixel = max_pixel.max(relative_error(analytic, numeric));
            pixel_checked += 1;
        }

        Ok(GradientCheck {
            layer_checked: a.len(),
            pixel_checked,
            max_layer_rel_error: max_layer,
            max_pixel_rel_error: max_pixel,
        })
    }
}

/// Log-softmax and softmax. The normalizer is taken relative to the largest
/// logit through `ln_1p`, so log-probabilities near zero keep full relative
/// precision.
fn log_softmax(logits: &[f64; VOCAB]) -> ([f64; VOCAB], [f64; VOCAB]) {
    let top = (0..VOCAB).fold(0, |best, v| if logits[v] > logits[best] { v } else { best });
    let rest: f64 = (0..VOCAB)
        .filter(|&v| v != top)
        .map(|v| (logits[v] - logits[top]).exp())
        .sum();
    let log_norm = rest.ln_1p();
    let lsm = std::array::from_fn(|v| (logits[v] - logits[top]) - log_norm);
    (lsm, lsm.map(f64::exp))
}

fn stain_from_prompt(prompt: &SpecializedPrompt) -> StainType {
    let text: String = format!("{} {}", prompt.system_prompt, prompt.notes)
        .chars()
        .filter(|c| c.is_ascii_alphanumeric())
        .map(|c| c.to_ascii_uppercase())
        .collect();
    [("KI67", StainType::Ki67), ("PDL1", StainType::Pdl1), ("BRAF", StainType::Braf)]
        .into_iter()
        .filter_map(|(needle, stain)| text.find(needle).map(|pos| (pos, stain)))
        .min_by_key(|&(pos, _)| pos)
        .map_or(StainType::Other, |(_, stain)| stain)
}

impl VisionLanguageBackend for ToyBackend {
    fn descriptor(&self) -> &BackendDescriptor {
        &self.descriptor
    }

    fn generate(&self, image: &ImageBuffer, prompt: &SpecializedPrompt) -> Result<GenerationResult, BackendError> {
        let f = self.features(image);
        let template = self.template_report(&f, prompt).to_canonical_json();
        let planned = Self::tokenize(&template)?;
        if planned.len() >= MAX_TOKENS {
            return Err(BackendError::GenerationFailed("template exceeds the length cap".into()));
        }

        let mut token_ids = Vec::with_capacity(planned.len());
        let mut logprobs = Vec::with_capacity(planned.len());
        let mut prev = EOS;
        for step in 0..=planned.len() {
            let target = planned.get(step).copied().unwrap_or(EOS);
            let logits = self.step_logits(&f, prev, target);
            // first maximum wins, i.e. ties go to the lowest id
            let chosen = (0..VOCAB).fold(0, |best, v| if logits[v] > logits[best] { v } else { best }) as u32;
            if chosen != target {
                return Err(BackendError::GenerationFailed(format!(
                    "decoder chose token {chosen} instead of template token {target} at step {step}"
                )));
            }
            if chosen == EOS {
                break;
            }
            let (lsm, _) = log_softmax(&logits);
            token_ids.push(chosen);
            logprobs.push(lsm[chosen as usize]);
            prev = chosen;
        }

        let text: String = token_ids
            .iter()
            .map(|&t| char::from(byte_for_token(t).expect("decoded ids are in the alphabet")))
            .collect();
        let offsets = (0..token_ids.len()).map(|i| (i, i + 1)).collect();
        Ok(GenerationResult { token_ids, text, offsets, logprobs })
    }

    fn capture(
        &self,
        image: &ImageBuffer,
        _prompt: &SpecializedPrompt,
        gen: &GenerationResult,
        span: TokenSpan,
        mode: CaptureMode,
    ) -> Result<CaptureBundle, BackendError> {
        self.capture_traced(image, gen, span, mode).map(|(bundle, _)| bundle)
    }
}
