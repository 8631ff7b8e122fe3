//! Tissue detection: luma, Otsu threshold, square-kernel closing and opening,
//! then the largest 4-connected component.

use super::{ImageBuffer, ImageError};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaskParams {
    /// Side of the square structuring element. Must be odd.
    pub morph_kernel: usize,
    /// Components covering less than this fraction of the frame are dropped.
    pub min_component_fraction: f64,
}

impl Default for MaskParams {
    fn default() -> Self {
        Self {
            morph_kernel: 5,
            min_component_fraction: 0.01,
        }
    }
}

impl MaskParams {
    pub fn validate(&self) -> Result<(), ImageError> {
        if self.morph_kernel == 0 || self.morph_kernel % 2 == 0 {
            return Err(ImageError::InvalidMaskParams(format!(
                "morph_kernel must be odd and >= 1, got {}",
                self.morph_kernel
            )));
        }
        if !(self.min_component_fraction > 0.0 && self.min_component_fraction < 1.0) {
            return Err(ImageError::InvalidMaskParams(format!(
                "min_component_fraction must lie in (0, 1), got {}",
                self.min_component_fraction
            )));
        }
        Ok(())
    }
}

/// Boolean tissue mask with at least one set pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct TissueMask {
    width: u32,
    height: u32,
    bits: Vec<bool>,
    tissue_fraction: f64,
}

impl TissueMask {
    pub fn from_bits(width: u32, height: u32, bits: Vec<bool>) -> Result<Self, ImageError> {
        if width == 0 || height == 0 || bits.len() != width as usize * height as usize {
            return Err(ImageError::InvalidDimensions {
                width,
                height,
                len: bits.len(),
            });
        }
        let count = bits.iter().filter(|&&b| b).count();
        if count == 0 {
            return Err(ImageError::NoTissueFound);
        }
        Ok(Self {
            width,
            height,
            tissue_fraction: count as f64 / bits.len() as f64,
            bits,
        })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height as usize, self.width as usize)
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn get(&self, x: u32, y: u32) -> bool {
        self.bits[y as usize * self.width as usize + x as usize]
    }

    pub fn tissue_fraction(&self) -> f64 {
        self.tissue_fraction
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }
}

/// ITU-R 601 luma, rounded half up in exact integer arithmetic.
pub fn grayscale(img: &ImageBuffer) -> Vec<u8> {
    img.pixel_iter()
        .map(|[r, g, b]| {
            let weighted = 299 * u32::from(r) + 587 * u32::from(g) + 114 * u32::from(b);
            ((weighted + 500) / 1000) as u8
        })
        .collect()
}

/// Otsu threshold over a 256-bin histogram.
///
/// Returns `t` such that the dark class is `{g < t}`; among equally good
/// splits the smallest `t` wins. Returns 0 when no split separates two
/// non-empty classes.
pub fn otsu_threshold(histogram: &[u64; 256]) -> u8 {
    let total: u64 = histogram.iter().sum();
    let total_sum: f64 = histogram
        .iter()
        .enumerate()
        .map(|(g, &n)| g as f64 * n as f64)
        .sum();

    let mut best_t = 0u8;
    let mut best_var = 0.0f64;
    let mut w0 = 0u64;
    let mut s0 = 0.0f64;
    for t in 1..=255usize {
        w0 += histogram[t - 1];
        s0 += (t - 1) as f64 * histogram[t - 1] as f64;
        let w1 = total - w0;
        if w0 == 0 || w1 == 0 {
            continue;
        }
        let m0 = s0 / w0 as f64;
        let m1 = (total_sum - s0) / w1 as f64;
        let var = w0 as f64 * w1 as f64 * (m0 - m1) * (m0 - m1);
        if var > best_var {
            best_var = var;
            best_t = t as u8;
        }
    }
    best_t
}

pub fn compute_tissue_mask(img: &ImageBuffer, params: &MaskParams) -> Result<TissueMask, ImageError> {
    params.validate()?;
    let (h, w) = img.dims();
    let gray = grayscale(img);

    let mut histogram = [0u64; 256];
    for &g in &gray {
        histogram[g as usize] += 1;
    }
    let threshold = otsu_threshold(&histogram);
    let raw: Vec<bool> = gray.iter().map(|&g| g < threshold).collect();

    let cleaned = close_then_open(&raw, w, h, params.morph_kernel);
    let min_size = params.min_component_fraction * (w * h) as f64;
    let bits = largest_component(&cleaned, w, h, min_size).ok_or(ImageError::NoTissueFound)?;
    TissueMask::from_bits(img.width(), img.height(), bits)
}

/// Closing followed by opening, computed on a canvas padded with background
/// so that results match an unbounded plane of background around the image.
fn close_then_open(bits: &[bool], w: usize, h: usize, kernel: usize) -> Vec<bool> {
    let radius = kernel / 2;
    if radius == 0 {
        return bits.to_vec();
    }
    let pad = 2 * radius + 1;
    let (pw, ph) = (w + 2 * pad, h + 2 * pad);
    let mut canvas = vec![false; pw * ph];
    for y in 0..h {
        let src = &bits[y * w..(y + 1) * w];
        canvas[(y + pad) * pw + pad..(y + pad) * pw + pad + w].copy_from_slice(src);
    }

    let canvas = dilate(&canvas, pw, ph, radius);
    let canvas = erode(&canvas, pw, ph, radius);
    let canvas = erode(&canvas, pw, ph, radius);
    let canvas = dilate(&canvas, pw, ph, radius);

    let mut out = Vec::with_capacity(w * h);
    for y in 0..h {
        out.extend_from_slice(&canvas[(y + pad) * pw + pad..(y + pad) * pw + pad + w]);
    }
    out
}

fn dilate(bits: &[bool], w: usize, h: usize, radius: usize) -> Vec<bool> {
    separable(bits, w, h, radius, |mut window| Iterator::any(&mut window, |b| b))
}

fn erode(bits: &[bool], w: usize, h: usize, radius: usize) -> Vec<bool> {
    // Cells outside the canvas count as background.
    separable(bits, w, h, radius, |mut window| Iterator::all(&mut window, |b| b))
}

fn separable(
    bits: &[bool],
    w: usize,
    h: usize,
    radius: usize,
    reduce: impl Fn(&mut dyn Iterator<Item = bool>) -> bool,
) -> Vec<bool> {
    let r = radius as isize;
    let sample = |buf: &[bool], x: isize, y: isize| -> bool {
        if x < 0 || y < 0 || x >= w as isize || y >= h as isize {
            false
        } else {
            buf[y as usize * w + x as usize]
        }
    };
    let mut rows = vec![false; w * h];
    for y in 0..h as isize {
        for x in 0..w as isize {
            let mut it = (-r..=r).map(|d| sample(bits, x + d, y));
            rows[y as usize * w + x as usize] = reduce(&mut it);
        }
    }
    let mut out = vec![false; w * h];
    for y in 0..h as isize {
        for x in 0..w as isize {
            let mut it = (-r..=r).map(|d| sample(&rows, x, y + d));
            out[y as usize * w + x as usize] = reduce(&mut it);
        }
    }
    out
}

/// Keeps the largest 4-connected component if it reaches `min_size` pixels.
/// Ties go to the component found first in row-major scan order.
fn largest_component(bits: &[bool], w: usize, h: usize, min_size: f64) -> Option<Vec<bool>> {
    let mut label = vec![0u32; w * h];
    let mut best: Option<(u32, usize)> = None;
    let mut next = 0u32;
    let mut stack = Vec::new();

    for start in 0..w * h {
        if !bits[start] || label[start] != 0 {
            continue;
        }
        next += 1;
        label[start] = next;
        stack.push(start);
        let mut size = 0usize;
        while let Some(i) = stack.pop() {
            size += 1;
            let (x, y) = (i % w, i / w);
            let mut visit = |j: usize| {
                if bits[j] && label[j] == 0 {
                    label[j] = next;
                    stack.push(j);
                }
            };
            if x > 0 {
                visit(i - 1);
            }
            if x + 1 < w {
                visit(i + 1);
            }
            if y > 0 {
                visit(i - w);
            }
            if y + 1 < h {
                visit(i + w);
            }
        }
        if best.is_none_or(|(_, s)| size > s) {
            best = Some((next, size));
        }
    }

    let (keep, size) = best?;
    if (size as f64) < min_size {
        return None;
    }
    Some(label.iter().map(|&l| l == keep).collect())
}
