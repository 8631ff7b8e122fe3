//! Acceptance suite: one line per criterion, nonzero exit on any failure.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::Arc;
use std::time::{Duration, Instant};

use common::*;
use ndarray::{array, Array2, Array3, Axis};
use reqwest::blocking::multipart::{Form, Part};
use reqwest::blocking::Client;
use serde_json::{json, Value};
use stainscope_core::backend::toy::RectifierTrace;
use stainscope_core::fixtures::{bait_slide, contrast_slide, disk_on_white, disk_raster, probe_slide, TISSUE, WHITE};
use stainscope_core::imaging::mean_fill_color;
use stainscope_core::xai::{gradient_saliency, ExplanationMethod};
use stainscope_core::*;
use stainscope_service::router;
use stainscope_service::store::SESSION_FILE;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        match $cond {
            true => {}
            false => return Err(format!($($msg)+)),
        }
    };
}

fn main() {
    let criteria: [Criterion; 10] = [
        ("cam-oracle-equivalence", cam_oracles),
        ("gradient-correctness", gradient_correctness),
        ("guided-gating", guided_gating),
        ("hirescam-gradcam-identity", hirescam_identity),
        ("roi-inpainting-exactness", inpainting_exactness),
        ("determinism", determinism),
        ("schema", schema),
        ("token-span-targeting", span_targeting),
        ("focus-consistency", focus_behavior),
        ("api-integration", api_integration),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        let outcome = catch_unwind(AssertUnwindSafe(check))
            .unwrap_or_else(|p| Err(format!("panicked: {}", panic_text(&*p))));
        match outcome {
            Ok(detail) => println!("PASS {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL {name}: {detail}");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}

fn panic_text(p: &(dyn std::any::Any + Send)) -> String {
    p.downcast_ref::<String>()
        .cloned()
        .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
        .unwrap_or_else(|| "unknown panic".into())
}

fn prompt() -> SpecializedPrompt {
    let script: Value = serde_json::from_str(&std::fs::read_to_string(fixture("llm_script.json")).unwrap()).unwrap();
    SpecializedPrompt::parse(&script["replies"][0].to_string()).unwrap()
}

fn bundle(a: Array3<f64>, g: Array3<f64>, mode: CaptureMode) -> CaptureBundle {
    CaptureBundle {
        activations: a,
        layer_gradients: g,
        input_gradients: Array3::zeros((2, 2, 3)),
        mode,
        loss: 0.0,
        span_logprobs: vec![],
    }
}

fn stack(channels: &[Array2<f64>]) -> Array3<f64> {
    let views: Vec<_> = channels.iter().map(|c| c.view()).collect();
    ndarray::stack(Axis(0), &views).unwrap()
}

fn max_abs_diff(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    assert_eq!(a.dim(), b.dim());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Hand-computed 2×2 fixtures; abs err < 1e-9, runtime < 1 s.
fn cam_oracles() -> Outcome {
    let start = Instant::now();
    let std = CaptureMode::Standard;
    let two = bundle(
        stack(&[array![[1., 0.], [0., 1.]], array![[0., 2.], [2., 0.]]]),
        stack(&[Array2::from_elem((2, 2), 0.5), array![[1., -1.], [-1., 1.]]]),
        std,
    );
    let single = bundle(stack(&[array![[4., 0.], [0., 0.]]]), stack(&[array![[1., 0.], [0., 0.]]]), std);
    let ones = bundle(Array3::from_elem((1, 2, 2), 1.0), Array3::from_elem((1, 2, 2), 1.0), std);
    let flat = bundle(stack(&[Array2::from_elem((2, 2), 2.0)]), stack(&[array![[1., 0.], [0., 0.]]]), std);
    let zero_g = bundle(stack(&[array![[3., 1.], [0., 2.]]]), Array3::zeros((1, 2, 2)), std);

    let cases = [
        ("grad_cam two-channel", grad_cam(&two).unwrap().values, array![[0.5, 0.], [0., 0.5]]),
        ("grad_cam zero gradients", grad_cam(&zero_g).unwrap().values, Array2::zeros((2, 2))),
        ("grad_cam_pp single cell", grad_cam_pp(&single).unwrap().values, array![[2. / 3., 0.], [0., 0.]]),
        ("grad_cam_pp ones", grad_cam_pp(&ones).unwrap().values, Array2::from_elem((2, 2), 2. / 3.)),
        ("grad_cam_pp zero gradients", grad_cam_pp(&zero_g).unwrap().values, Array2::zeros((2, 2))),
        ("hires_cam single", hires_cam(&flat).unwrap().values, array![[2., 0.], [0., 0.]]),
        ("grad_cam same input", grad_cam(&flat).unwrap().values, Array2::from_elem((2, 2), 0.5)),
    ];
    let mut worst: f64 = 0.0;
    for (name, got, want) in &cases {
        let err = max_abs_diff(got, want);
        ensure!(err < 1e-9, "{name}: abs err {err:e}");
        worst = worst.max(err);
    }
    let elapsed = start.elapsed();
    ensure!(elapsed < Duration::from_secs(1), "runtime {elapsed:?} >= 1 s");
    Ok(format!("{} fixtures, max abs err {worst:e} (< 1e-9), {elapsed:.2?} (< 1 s)", cases.len()))
}

/// Toy seed 42, fixed image; all 512 layer units and every input value;
/// central differences eps 1e-3, relative error < 1e-4, runtime < 60 s.
fn gradient_correctness() -> Outcome {
    let start = Instant::now();
    let toy = make_toy_backend(ToySpec::new(42));
    let img = probe_slide();
    let gen = generate_report(&toy, &img, &prompt()).unwrap();
    let mut worst_layer: f64 = 0.0;
    let mut worst_pixel: f64 = 0.0;
    let mut pixels = usize::MAX;
    for field in [ReportField::StainingLocationPerCell, ReportField::StainingIntensityGrade] {
        let span = locate_value_span(&gen, field).unwrap();
        let check = toy.gradient_check(&img, &gen, span, 1e-3, 1).unwrap();
        ensure!(check.layer_checked == 512, "checked {} layer units", check.layer_checked);
        worst_layer = worst_layer.max(check.max_layer_rel_error);
        worst_pixel = worst_pixel.max(check.max_pixel_rel_error);
        pixels = pixels.min(check.pixel_checked);
    }
    let elapsed = start.elapsed();
    ensure!(pixels >= 100, "only {pixels} pixel gradients checked");
    ensure!(worst_layer < 1e-4, "layer rel err {worst_layer:e}");
    ensure!(worst_pixel < 1e-4, "pixel rel err {worst_pixel:e}");
    ensure!(elapsed < Duration::from_secs(60), "runtime {elapsed:?} >= 60 s");
    Ok(format!(
        "max rel err layer {worst_layer:.2e}, pixel {worst_pixel:.2e} (< 1e-4) over 512 units and {pixels} inputs per field, {elapsed:.2?} (< 60 s)"
    ))
}

fn gated_violations(trace: &RectifierTrace) -> usize {
    trace
        .pre_activations
        .iter()
        .zip(trace.grad_in.iter())
        .zip(trace.grad_out.iter())
        .filter(|((z, g_in), g_out)| (**z < 0.0 || **g_out <= 0.0) && **g_in != 0.0)
        .count()
}

fn guided_gating() -> Outcome {
    let toy = make_toy_backend(ToySpec::new(42));
    let mut negative_units = 0;
    let mut differing = 0;
    for img in [probe_slide(), contrast_slide(), bait_slide()] {
        let gen = generate_report(&toy, &img, &prompt()).unwrap();
        for field in ReportField::ALL {
            let span = locate_value_span(&gen, field).unwrap();
            let (std_bundle, _) = toy.capture_traced(&img, &gen, span, CaptureMode::Standard).unwrap();
            let (guided_bundle, trace) = toy.capture_traced(&img, &gen, span, CaptureMode::Guided).unwrap();
            let violations = gated_violations(&trace);
            ensure!(violations == 0, "{violations} rectifier units leak gradient ({field})");
            negative_units += trace.pre_activations.iter().filter(|&&z| z < 0.0).count();
            if gradient_saliency(&std_bundle) != guided_backprop_saliency(&guided_bundle).unwrap().values {
                differing += 1;
            }
            ensure!(toy.is_inference_mode(), "backend left in gradient mode");
        }
    }
    ensure!(negative_units > 0, "fixtures never produce a negative pre-activation");
    ensure!(differing > 0, "guided saliency equals standard saliency on every fixture");
    Ok(format!(
        "0 leaking units over {negative_units} negative pre-activations; guided saliency differs on {differing}/21 captures"
    ))
}

fn hirescam_identity() -> Outcome {
    let toy = make_toy_backend(ToySpec::new(42));
    let mut identical = 0;
    for img in [probe_slide(), contrast_slide(), bait_slide()] {
        let gen = generate_report(&toy, &img, &prompt()).unwrap();
        for field in ReportField::ALL {
            let span = locate_value_span(&gen, field).unwrap();
            let b = toy.capture(&img, &prompt(), &gen, span, CaptureMode::Standard).unwrap();
            ensure!(hires_cam(&b).unwrap().values == grad_cam(&b).unwrap().values, "maps differ on toy ({field})");
            identical += 1;
        }
    }
    let constant = bundle(
        stack(&[array![[1., 3.], [0., 2.]], array![[0.5, 0.], [4., 1.]]]),
        stack(&[Array2::from_elem((2, 2), 0.3), Array2::from_elem((2, 2), -0.7)]),
        CaptureMode::Standard,
    );
    ensure!(hires_cam(&constant).unwrap().values == grad_cam(&constant).unwrap().values, "constant-gradient fixture differs");

    let contrast = bundle(stack(&[Array2::from_elem((2, 2), 2.0)]), stack(&[array![[1., 0.], [0., 0.]]]), CaptureMode::Standard);
    let h = hires_cam(&contrast).unwrap().values;
    let g = grad_cam(&contrast).unwrap().values;
    let differing = h.iter().zip(&g).filter(|(a, b)| a != b).count();
    ensure!(differing >= 1, "contrast fixture gives identical maps");
    Ok(format!("exactly equal on {identical} toy captures and the constant fixture; contrast fixture differs at {differing}/4 cells"))
}

fn inpainting_exactness() -> Outcome {
    let (w, h, cx, cy, r) = (240, 180, 110.0, 95.0, 60.0);
    let img = disk_on_white(w, h, cx, cy, r, TISSUE);
    let disk = disk_raster(w, h, cx, cy, r);
    let mask = compute_tissue_mask(&img, &MaskParams::default()).map_err(|e| e.to_string())?;
    let inter = mask.bits().iter().zip(&disk).filter(|(a, b)| **a && **b).count();
    let union = mask.bits().iter().zip(&disk).filter(|(a, b)| **a || **b).count();
    let iou = inter as f64 / union as f64;
    ensure!(iou >= 0.95, "mask IoU {iou:.4} < 0.95");

    let fill = mean_fill_color(&img, &mask).unwrap();
    let out = apply_roi_inpainting(&img, &mask).unwrap();
    let mut bad_bg = 0;
    let mut bad_tissue = 0;
    for y in 0..h {
        for x in 0..w {
            if mask.get(x, y) {
                bad_tissue += usize::from(out.pixel(x, y) != img.pixel(x, y));
            } else {
                bad_bg += usize::from(out.pixel(x, y) != fill);
            }
        }
    }
    ensure!(fill == TISSUE, "fill {fill:?} is not the tissue mean {TISSUE:?}");
    ensure!(bad_bg == 0 && bad_tissue == 0, "{bad_bg} background and {bad_tissue} tissue pixels wrong");

    let white = ImageBuffer::filled(128, 96, WHITE).unwrap();
    ensure!(
        compute_tissue_mask(&white, &MaskParams::default()) == Err(ImageError::NoTissueFound),
        "all-white input did not give NoTissueFound"
    );
    Ok(format!("IoU {iou:.4} (>= 0.95), background byte-exact fill {fill:?}, tissue untouched, all-white -> NoTissueFound"))
}

/// Runs the whole pipeline in a fresh store and returns (session.json, report
/// text, heatmap files).
fn pipeline_run() -> (Value, String, Vec<(String, Vec<u8>)>) {
    let dir = tempfile::tempdir().unwrap();
    let wb = workbench(dir.path());
    let s = wb.create_session(&png(&bait_slide()), QUERY, true).unwrap();
    wb.run_prompt_stage(&s.id).unwrap();
    let s = wb.run_analysis_stage(&s.id).unwrap();
    let mut files = Vec::new();
    for (field, method) in [
        ("staining_location_per_cell", "gradcam"),
        ("staining_intensity_grade", "gradcampp"),
        ("percentage_of_cells_stained", "hirescam"),
        ("stain_type", "guided_gradcam"),
    ] {
        let e = wb.run_explanation(&s.id, field, method).unwrap();
        for r in [&e.overlay_ref, &e.map_ref] {
            files.push((r.clone(), wb.store().read_artifact(&s.id, r).unwrap()));
        }
    }
    let session_json = std::fs::read(dir.path().join(&s.id).join(SESSION_FILE)).unwrap();
    (without_volatile(&session_json), s.generation.unwrap().text, files)
}

fn determinism() -> Outcome {
    let (json_a, text_a, files_a) = pipeline_run();
    let (json_b, text_b, files_b) = pipeline_run();
    ensure!(text_a.as_bytes() == text_b.as_bytes(), "report text differs");
    ensure!(json_a == json_b, "session.json differs beyond id and timestamps");
    ensure!(files_a.len() == 8 && files_a == files_b, "heatmap files differ");
    let bytes: usize = files_a.iter().map(|(_, b)| b.len()).sum();
    Ok(format!(
        "report text ({} bytes), session.json modulo id/timestamps, and 8 heatmap files ({bytes} bytes) identical across two runs",
        text_a.len()
    ))
}

fn schema() -> Outcome {
    let table = std::fs::read_to_string(fixture("reference_report.json")).unwrap();
    let v = validate_report(&table).map_err(|e| format!("reference report rejected: {e}"))?;
    let canonical = v.report.to_canonical_json();
    let again = validate_report(&canonical).map_err(|e| format!("canonical form rejected: {e}"))?;
    ensure!(again.report == v.report, "round trip changed the report");
    ensure!(again.report.to_canonical_json() == canonical, "canonical form not stable");
    ensure!(v.report.stain_type == StainType::Pdl1, "stain type {:?}", v.report.stain_type);

    let mut graded: Value = serde_json::from_str(&table).unwrap();
    graded["staining_intensity_grade"] = 5.into();
    ensure!(
        matches!(validate_report(&graded.to_string()), Err(ReportError::InvalidGrade(_))),
        "grade 5 accepted"
    );
    let inverted = table.replace("\"0-10\"", "\"10-5\"");
    ensure!(
        matches!(validate_report(&inverted), Err(ReportError::InvalidRange(_))),
        "range 10-5 accepted"
    );
    Ok("reference report validates and round-trips canonically; grade 5 and range \"10-5\" rejected".into())
}

fn span_targeting() -> Outcome {
    let mut checked = 0;
    for seed in [42, 7, 2024] {
        let toy = make_toy_backend(ToySpec::new(seed));
        for img in [probe_slide(), contrast_slide(), bait_slide()] {
            let gen = generate_report(&toy, &img, &prompt()).unwrap();
            let report = validate_report(extract_json_block(&gen.text).unwrap()).unwrap().report;
            for field in ReportField::ALL {
                let span = locate_value_span(&gen, field).map_err(|e| e.to_string())?;
                let got = gen.span_text(span);
                let want = resolve_field_value(&report, field);
                ensure!(got == want, "seed {seed} {field}: span decodes to {got:?}, expected {want:?}");
                checked += 1;
            }
        }
    }

    let toy = make_toy_backend(ToySpec::new(42));
    let img = contrast_slide();
    let gen = generate_report(&toy, &img, &prompt()).unwrap();
    let grade = explain_field(&toy, &img, &prompt(), &gen, ReportField::StainingIntensityGrade, ExplanationMethod::GradCam)
        .map_err(|e| e.to_string())?;
    let location = explain_field(&toy, &img, &prompt(), &gen, ReportField::StainingLocationPerCell, ExplanationMethod::GradCam)
        .map_err(|e| e.to_string())?;
    let diff = max_abs_diff(&grade.map01, &location.map01);
    ensure!(diff > 0.0, "grade and location maps are identical");
    Ok(format!("{checked} field spans decode exactly; grade vs location Grad-CAM maps differ (max abs diff {diff:.3})"))
}

fn focus_behavior() -> Outcome {
    let toy = make_toy_backend(ToySpec::new(42));
    let img = bait_slide();
    let mask = compute_tissue_mask(&img, &MaskParams::default()).unwrap();
    let clean = apply_roi_inpainting(&img, &mask).unwrap();
    let score = |im: &ImageBuffer| -> Result<f64, String> {
        let gen = generate_report(&toy, im, &prompt()).map_err(|e| e.to_string())?;
        explain_field(&toy, im, &prompt(), &gen, ReportField::StainingLocationPerCell, ExplanationMethod::GradCam)
            .map_err(|e| e.to_string())?
            .focus_score(&mask)
            .map_err(|e| e.to_string())
    };
    let before = score(&img)?;
    let after = score(&clean)?;
    ensure!((0.0..=1.0).contains(&before) && (0.0..=1.0).contains(&after), "score out of [0, 1]");
    ensure!(after >= before, "after in-painting {after:.4} < before {before:.4}");

    let (h, w) = mask.dims();
    let zero = focus_consistency(Array2::zeros((h, w)).view(), &mask).unwrap();
    ensure!(zero == 0.0, "all-zero map scores {zero}");
    let inside = Array2::from_shape_fn((h, w), |(y, x)| if mask.get(x as u32, y as u32) { 1.0 } else { 0.0 });
    let full = focus_consistency(inside.view(), &mask).unwrap();
    ensure!(full == 1.0, "all-inside map scores {full}");
    let tiny = TissueMask::from_bits(2, 2, vec![true, false, false, true]).unwrap();
    let half = focus_consistency(array![[1., 0.], [0., 1.]].view(), &tiny).unwrap();
    let left = TissueMask::from_bits(2, 2, vec![true, false, true, false]).unwrap();
    let oracle = focus_consistency(array![[1., 0.], [0., 1.]].view(), &left).unwrap();
    ensure!(half == 1.0 && (oracle - 0.5).abs() < 1e-12, "oracle scores {half}, {oracle}");

    let mut map = Array2::from_shape_fn((h, w), |(y, x)| ((x * 7 + y * 3) % 11) as f64 / 10.0);
    let mut last = focus_consistency(map.view(), &mask).unwrap();
    for (i, v) in map.iter_mut().enumerate() {
        if mask.bits()[i] && i % 13 == 0 {
            *v = 1.0;
        }
    }
    let raised = focus_consistency(map.view(), &mask).unwrap();
    ensure!(raised >= last, "adding in-mask mass lowered the score");
    last = raised;
    Ok(format!(
        "bait fixture {before:.4} -> {after:.4} after in-painting; zero map 0, all-inside 1, oracle 0.5, monotone ({last:.3})"
    ))
}

fn api_integration() -> Outcome {
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let url = serve(router(Arc::new(workbench(dir.path()))));
    let client = Client::new();
    let form = Form::new()
        .part("image", Part::bytes(png(&probe_slide())).file_name("slide.png"))
        .text("query", QUERY)
        .text("inpainting", "true");
    let resp = client.post(format!("{url}/api/sessions")).multipart(form).send().map_err(|e| e.to_string())?;
    ensure!(resp.status() == 201, "create returned {}", resp.status());
    let id = resp.json::<Value>().unwrap()["id"].as_str().unwrap().to_string();

    let early = client.post(format!("{url}/api/sessions/{id}/analyze")).send().unwrap().status();
    ensure!(early == 409, "analyze before prompt returned {early}");
    let early = client
        .post(format!("{url}/api/sessions/{id}/explanations"))
        .json(&json!({"field": "report", "method": "gradcam"}))
        .send()
        .unwrap()
        .status();
    ensure!(early == 409, "explain before analyze returned {early}");

    for stage in ["prompt", "analyze"] {
        let status = client.post(format!("{url}/api/sessions/{id}/{stage}")).send().unwrap().status();
        ensure!(status == 200, "{stage} returned {status}");
    }
    let again = client.post(format!("{url}/api/sessions/{id}/prompt")).send().unwrap().status();
    ensure!(again == 409, "second prompt returned {again}");

    let e: Value = client
        .post(format!("{url}/api/sessions/{id}/explanations"))
        .json(&json!({"field": "staining_location_per_cell", "method": "gradcam"}))
        .send()
        .unwrap()
        .json()
        .unwrap();
    let image_url = e["image_url"].as_str().ok_or("no image_url in explanation")?;
    let png_bytes = client.get(format!("{url}{image_url}")).send().unwrap().bytes().unwrap();
    let overlay = decode_image(&png_bytes, ImageFormatHint::Png).map_err(|e| e.to_string())?;
    ensure!(overlay.dims() == probe_slide().dims(), "overlay size {:?}", overlay.dims());
    let elapsed = start.elapsed();
    ensure!(elapsed < Duration::from_secs(30), "runtime {elapsed:?} >= 30 s");
    Ok(format!(
        "create -> prompt -> analyze -> explain -> PNG over localhost with scripted LLM; wrong-state calls 409; {elapsed:.2?} (< 30 s)"
    ))
}
