use ndarray::ArrayView2;

use super::{ImageBuffer, ImageError};

const CONTROL_POINTS: [(f64, [f64; 3]); 5] = [
    (0.0, [0.0, 0.0, 255.0]),
    (0.25, [0.0, 255.0, 255.0]),
    (0.5, [0.0, 255.0, 0.0]),
    (0.75, [255.0, 255.0, 0.0]),
    (1.0, [255.0, 0.0, 0.0]),
];

/// Piecewise-linear blue → cyan → green → yellow → red palette on `[0, 1]`.
pub fn colormap(v: f64) -> [f64; 3] {
    let v = v.clamp(0.0, 1.0);
    for pair in CONTROL_POINTS.windows(2) {
        let (v0, c0) = pair[0];
        let (v1, c1) = pair[1];
        if v <= v1 {
            let t = (v - v0) / (v1 - v0);
            return [0, 1, 2].map(|i| c0[i] + (c1[i] - c0[i]) * t);
        }
    }
    CONTROL_POINTS[4].1
}

/// Alpha-blends the colormapped heat values over the image.
pub fn render_overlay(
    img: &ImageBuffer,
    map01: ArrayView2<'_, f64>,
    alpha: f64,
) -> Result<ImageBuffer, ImageError> {
    if map01.dim() != img.dims() {
        return Err(ImageError::DimensionMismatch {
            expected: img.dims(),
            actual: map01.dim(),
        });
    }
    if !(0.0..=1.0).contains(&alpha) {
        return Err(ImageError::ValueOutOfRange(alpha));
    }
    if let Some(&bad) = map01.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(ImageError::ValueOutOfRange(bad));
    }

    let mut pixels = Vec::with_capacity(img.pixels().len());
    for (p, &v) in img.pixel_iter().zip(map01.iter()) {
        let color = colormap(v);
        for c in 0..3 {
            let blended = (1.0 - alpha) * f64::from(p[c]) + alpha * color[c];
            pixels.push(blended.round().clamp(0.0, 255.0) as u8);
        }
    }
    ImageBuffer::new(img.width(), img.height(), pixels)
}
