use criterion::{criterion_group, criterion_main, Criterion};
use stainscope_bench::{large_slide, prompt, small_slide};
use stainscope_core::xai::ExplanationMethod;
use stainscope_core::*;

fn imaging(c: &mut Criterion) {
    let img = large_slide();
    let params = MaskParams::default();
    c.bench_function("tissue_mask_512", |b| b.iter(|| compute_tissue_mask(&img, &params).unwrap()));
    let mask = compute_tissue_mask(&img, &params).unwrap();
    c.bench_function("inpaint_512", |b| b.iter(|| apply_roi_inpainting(&img, &mask).unwrap()));
}

fn cams(c: &mut Criterion) {
    let toy = make_toy_backend(ToySpec::new(42));
    let img = small_slide();
    let gen = generate_report(&toy, &img, &prompt()).unwrap();
    let span = locate_value_span(&gen, ReportField::StainingLocationPerCell).unwrap();
    let bundle = toy.capture(&img, &prompt(), &gen, span, CaptureMode::Standard).unwrap();
    c.bench_function("grad_cam", |b| b.iter(|| grad_cam(&bundle).unwrap()));
    c.bench_function("grad_cam_pp", |b| b.iter(|| grad_cam_pp(&bundle).unwrap()));
    c.bench_function("hires_cam", |b| b.iter(|| hires_cam(&bundle).unwrap()));
}

fn backend(c: &mut Criterion) {
    let toy = make_toy_backend(ToySpec::new(42));
    let img = small_slide();
    let p = prompt();
    c.bench_function("toy_generate", |b| b.iter(|| generate_report(&toy, &img, &p).unwrap()));
    let gen = generate_report(&toy, &img, &p).unwrap();
    let span = locate_value_span(&gen, ReportField::StainingLocationPerCell).unwrap();
    for mode in [CaptureMode::Standard, CaptureMode::Guided] {
        c.bench_function(&format!("toy_capture_{mode:?}").to_lowercase(), |b| {
            b.iter(|| toy.capture(&img, &p, &gen, span, mode).unwrap())
        });
    }
    for method in [ExplanationMethod::GradCam, ExplanationMethod::GuidedGradCam] {
        c.bench_function(&format!("explain_field_{}", method.as_str()), |b| {
            b.iter(|| explain_field(&toy, &img, &p, &gen, ReportField::StainingLocationPerCell, method).unwrap())
        });
    }
}

criterion_group!(benches, imaging, cams, backend);
criterion_main!(benches);
