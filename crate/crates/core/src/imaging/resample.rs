use ndarray::{Array2, Array3, ArrayView2};

use super::{ImageBuffer, ImageError};

/// Bilinear resampling with half-pixel centers: the source coordinate of
/// output index `d` is `(d + 0.5) * in / out - 0.5`, clamped to `[0, in - 1]`.
/// Each output value is clamped to the range of its four source cells.
pub fn upsample_bilinear(
    map: ArrayView2<'_, f64>,
    out_h: usize,
    out_w: usize,
) -> Result<Array2<f64>, ImageError> {
    let (in_h, in_w) = map.dim();
    if in_h == 0 || in_w == 0 || out_h == 0 || out_w == 0 {
        return Err(ImageError::DimensionMismatch {
            expected: (out_h, out_w),
            actual: (in_h, in_w),
        });
    }
    let rows = axis_taps(in_h, out_h);
    let cols = axis_taps(in_w, out_w);
    Ok(Array2::from_shape_fn((out_h, out_w), |(y, x)| {
        interpolate(|r, c| map[[r, c]], rows[y], cols[x])
    }))
}

/// Resizes an image to `(out_h, out_w, 3)` unit-range floats.
pub fn resize_to_float(img: &ImageBuffer, out_h: usize, out_w: usize) -> Array3<f64> {
    let src = img.to_unit_float();
    let (in_h, in_w, _) = src.dim();
    if (in_h, in_w) == (out_h, out_w) {
        return src;
    }
    let rows = axis_taps(in_h, out_h);
    let cols = axis_taps(in_w, out_w);
    Array3::from_shape_fn((out_h, out_w, 3), |(y, x, c)| {
        interpolate(|r, k| src[[r, k, c]], rows[y], cols[x])
    })
}

#[derive(Debug, Clone, Copy)]
struct Tap {
    lo: usize,
    hi: usize,
    t: f64,
}

fn axis_taps(input: usize, output: usize) -> Vec<Tap> {
    let scale = input as f64 / output as f64;
    (0..output)
        .map(|d| {
            let s = ((d as f64 + 0.5) * scale - 0.5).clamp(0.0, (input - 1) as f64);
            let lo = s.floor() as usize;
            let hi = (lo + 1).min(input - 1);
            Tap { lo, hi, t: s - lo as f64 }
        })
        .collect()
}

fn interpolate(at: impl Fn(usize, usize) -> f64, row: Tap, col: Tap) -> f64 {
    let corners = [
        at(row.lo, col.lo),
        at(row.lo, col.hi),
        at(row.hi, col.lo),
        at(row.hi, col.hi),
    ];
    let top = corners[0] + (corners[1] - corners[0]) * col.t;
    let bottom = corners[2] + (corners[3] - corners[2]) * col.t;
    let v = top + (bottom - top) * row.t;
    let lo = corners.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = corners.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    v.clamp(lo, hi)
}
