use stainscope_core::fixtures::{bait_slide, contrast_slide, disk_on_white, probe_slide, TISSUE};
use stainscope_core::xai::ExplanationMethod;
use stainscope_core::*;

fn prompt(text: &str) -> SpecializedPrompt {
    SpecializedPrompt {
        system_prompt: text.into(),
        notes: String::new(),
        required_json_keys: ReportField::ALL.iter().map(|f| f.key().to_string()).collect(),
    }
}

#[test]
fn spans_decode_to_resolved_values() {
    let images = [probe_slide(), contrast_slide(), bait_slide(), disk_on_white(50, 50, 25.0, 25.0, 15.0, TISSUE)];
    for seed in [1, 42, 9000] {
        let toy = make_toy_backend(ToySpec::new(seed));
        for (img, text) in images.iter().zip(["Ki-67 index", "PD-L1 TPS", "BRAF V600E", "unspecified"]) {
            let gen = generate_report(&toy, img, &prompt(text)).unwrap();
            let report = validate_report(extract_json_block(&gen.text).unwrap()).unwrap().report;
            for field in ReportField::ALL {
                let span = locate_value_span(&gen, field).unwrap();
                assert_eq!(gen.span_text(span), resolve_field_value(&report, field), "seed {seed} {field}");
            }
        }
    }
}

#[test]
fn different_fields_give_different_maps() {
    let toy = make_toy_backend(ToySpec::new(42));
    let img = contrast_slide();
    let p = prompt("PD-L1");
    let gen = generate_report(&toy, &img, &p).unwrap();
    let grade = explain_field(&toy, &img, &p, &gen, ReportField::StainingIntensityGrade, ExplanationMethod::GradCam).unwrap();
    let location = explain_field(&toy, &img, &p, &gen, ReportField::StainingLocationPerCell, ExplanationMethod::GradCam).unwrap();
    assert_ne!(grade.map01, location.map01);
    assert_eq!(grade.span_text, resolve_field_value(&validate_report(&gen.text).unwrap().report, ReportField::StainingIntensityGrade));
}

#[test]
fn every_method_produces_a_normalized_image_map() {
    let toy = make_toy_backend(ToySpec::new(42));
    let img = probe_slide();
    let p = prompt("PD-L1");
    let gen = generate_report(&toy, &img, &p).unwrap();
    for method in ExplanationMethod::ALL {
        let e = explain_field(&toy, &img, &p, &gen, ReportField::StainingLocationPerCell, method).unwrap();
        assert_eq!(e.map01.dim(), img.dims());
        let max = e.map01.iter().copied().fold(0.0, f64::max);
        assert!(e.map01.iter().all(|v| (0.0..=1.0).contains(v)));
        assert!(max == 1.0 || max == 0.0, "{method}: {max}");
    }
}

#[test]
fn bait_fixture_focus_improves_after_inpainting() {
    let toy = make_toy_backend(ToySpec::new(42));
    let img = bait_slide();
    let mask = compute_tissue_mask(&img, &MaskParams::default()).unwrap();
    let clean = apply_roi_inpainting(&img, &mask).unwrap();
    let p = prompt("PD-L1");
    let score = |im: &ImageBuffer| {
        let gen = generate_report(&toy, im, &p).unwrap();
        explain_field(&toy, im, &p, &gen, ReportField::StainingLocationPerCell, ExplanationMethod::GradCam)
            .unwrap()
            .focus_score(&mask)
            .unwrap()
    };
    let (before, after) = (score(&img), score(&clean));
    assert!((0.0..=1.0).contains(&before) && (0.0..=1.0).contains(&after));
    assert!(after >= before, "before {before} after {after}");
}
