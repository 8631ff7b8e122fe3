use stainscope_core::backend::toy::{relative_error, RectifierTrace};
use stainscope_core::fixtures::{contrast_slide, probe_slide};
use stainscope_core::xai::gradient_saliency;
use stainscope_core::*;

fn prompt() -> SpecializedPrompt {
    SpecializedPrompt {
        system_prompt: "Score PD-L1 membranous staining.".into(),
        notes: String::new(),
        required_json_keys: ReportField::ALL.iter().map(|f| f.key().to_string()).collect(),
    }
}

fn field_span(toy: &ToyBackend, img: &ImageBuffer, field: ReportField) -> (GenerationResult, TokenSpan) {
    let gen = generate_report(toy, img, &prompt()).unwrap();
    let span = locate_value_span(&gen, field).unwrap();
    (gen, span)
}

#[test]
fn finite_differences_match_every_field() {
    let toy = make_toy_backend(ToySpec::new(42));
    let img = probe_slide();
    for (i, field) in ReportField::ALL.into_iter().enumerate() {
        let (gen, span) = field_span(&toy, &img, field);
        let stride = if i == 0 { 1 } else { 11 };
        let check = toy.gradient_check(&img, &gen, span, 1e-3, stride).unwrap();
        assert_eq!(check.layer_checked, 512);
        assert!(check.pixel_checked >= 100);
        assert!(check.max_layer_rel_error < 1e-4, "{field}: {check:?}");
        assert!(check.max_pixel_rel_error < 1e-4, "{field}: {check:?}");
    }
}

#[test]
fn relative_error_floor() {
    assert_eq!(relative_error(0.0, 0.0), 0.0);
    assert!((relative_error(1.0, 0.5) - 0.5).abs() < 1e-15);
}

fn assert_gated(trace: &RectifierTrace, guided: bool) {
    for ((z, g_out), g_in) in trace
        .pre_activations
        .iter()
        .zip(trace.grad_out.iter())
        .zip(trace.grad_in.iter())
    {
        if *z < 0.0 {
            assert_eq!(*g_in, 0.0);
        }
        if guided && *g_out <= 0.0 {
            assert_eq!(*g_in, 0.0);
        }
        if *z > 0.0 && (!guided || *g_out > 0.0) {
            assert_eq!(g_in, g_out);
        }
    }
}

#[test]
fn rectifier_gating() {
    let toy = make_toy_backend(ToySpec::new(42));
    for img in [probe_slide(), contrast_slide()] {
        let (gen, span) = field_span(&toy, &img, ReportField::StainingLocationPerCell);
        let (_, standard) = toy.capture_traced(&img, &gen, span, CaptureMode::Standard).unwrap();
        let (_, guided) = toy.capture_traced(&img, &gen, span, CaptureMode::Guided).unwrap();
        assert!(standard.pre_activations.iter().any(|&z| z < 0.0));
        assert_gated(&standard, false);
        assert_gated(&guided, true);
    }
}

#[test]
fn guided_saliency_differs_from_standard() {
    let toy = make_toy_backend(ToySpec::new(42));
    let img = probe_slide();
    let (gen, span) = field_span(&toy, &img, ReportField::StainingLocationPerCell);
    let standard = toy.capture(&img, &prompt(), &gen, span, CaptureMode::Standard).unwrap();
    let guided = toy.capture(&img, &prompt(), &gen, span, CaptureMode::Guided).unwrap();
    assert_ne!(gradient_saliency(&standard), gradient_saliency(&guided));
}

#[test]
fn toy_layer_gradients_are_spatially_constant() {
    let toy = make_toy_backend(ToySpec::new(42));
    let img = contrast_slide();
    let (gen, span) = field_span(&toy, &img, ReportField::StainingIntensityGrade);
    let bundle = toy.capture(&img, &prompt(), &gen, span, CaptureMode::Standard).unwrap();
    for channel in bundle.layer_gradients.outer_iter() {
        let first = channel[[0, 0]];
        assert!(channel.iter().all(|&g| g == first));
    }
    assert_eq!(grad_cam(&bundle).unwrap().values, hires_cam(&bundle).unwrap().values);
}

#[test]
fn all_gray_generation_is_byte_identical() {
    let img = ImageBuffer::filled(64, 64, [128, 128, 128]).unwrap();
    let a = generate_report(&make_toy_backend(ToySpec::new(42)), &img, &prompt()).unwrap();
    let b = generate_report(&make_toy_backend(ToySpec::new(42)), &img, &prompt()).unwrap();
    assert_eq!(a.text.as_bytes(), b.text.as_bytes());
    assert_eq!(a.token_ids, b.token_ids);
}

#[test]
fn seeds_change_features() {
    let img = probe_slide();
    let f1 = make_toy_backend(ToySpec::new(1)).features(&img);
    let f2 = make_toy_backend(ToySpec::new(2)).features(&img);
    assert_ne!(f1, f2);
}
