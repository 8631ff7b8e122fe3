//! Deterministic synthetic slides used by tests, benches and the demo.

use crate::imaging::ImageBuffer;

pub const WHITE: [u8; 3] = [255, 255, 255];
/// Hematoxylin-like purple.
pub const TISSUE: [u8; 3] = [120, 70, 140];

/// Pixel `(x, y)` is inside when its center lies within `r` of `(cx, cy)`.
pub fn disk_raster(width: u32, height: u32, cx: f64, cy: f64, r: f64) -> Vec<bool> {
    let mut bits = Vec::with_capacity((width * height) as usize);
    for y in 0..height {
        for x in 0..width {
            let dx = x as f64 + 0.5 - cx;
            let dy = y as f64 + 0.5 - cy;
            bits.push(dx * dx + dy * dy <= r * r);
        }
    }
    bits
}

/// A single tissue-colored disk on white.
pub fn disk_on_white(width: u32, height: u32, cx: f64, cy: f64, r: f64, color: [u8; 3]) -> ImageBuffer {
    let bits = disk_raster(width, height, cx, cy, r);
    ImageBuffer::from_fn(width, height, |x, y| {
        if bits[(y * width + x) as usize] {
            color
        } else {
            WHITE
        }
    })
    .expect("fixture dimensions are valid")
}

/// Smoothly varying colors with a dark stained block; used for gradient checks.
pub fn probe_slide() -> ImageBuffer {
    ImageBuffer::from_fn(96, 80, |x, y| {
        let (fx, fy) = (x as f64 / 95.0, y as f64 / 79.0);
        let ring = ((fx - 0.6).powi(2) + (fy - 0.4).powi(2)).sqrt();
        if (10..40).contains(&x) && (44..72).contains(&y) {
            return [90, 50, 30];
        }
        [
            (230.0 - 150.0 * fx * fy) as u8,
            (40.0 + 180.0 * (6.0 * ring).sin().abs()) as u8,
            (60.0 + 170.0 * fy) as u8,
        ]
    })
    .expect("fixture dimensions are valid")
}

/// Tissue in the top half, with a left-right color contrast; a stained band
/// in the bottom half. Different toy features respond to different regions.
pub fn contrast_slide() -> ImageBuffer {
    ImageBuffer::from_fn(64, 64, |x, y| match (x < 32, y < 32) {
        (true, true) => [200, 40, 40],
        (false, true) => [40, 40, 200],
        (true, false) => [40, 200, 60],
        (false, false) => [230, 230, 230],
    })
    .expect("fixture dimensions are valid")
}

/// A dark tissue block on white with small dark marks scattered over the
/// background. The marks are too small to survive the mask's opening, so
/// they lie outside the tissue mask.
pub fn bait_slide() -> ImageBuffer {
    let mut img = ImageBuffer::filled(128, 128, WHITE).expect("fixture dimensions are valid");
    for y in 32..96 {
        for x in 16..64 {
            let shade = ((x * 7 + y * 3) % 16) as u8;
            img.set_pixel(x, y, [110 + shade, 60 + shade, 130 + shade]);
        }
    }
    for (bx, by) in BAIT_MARKS {
        for y in by..by + 4 {
            for x in bx..bx + 4 {
                img.set_pixel(x, y, [20, 10, 10]);
            }
        }
    }
    img
}

const BAIT_MARKS: [(u32, u32); 12] = [
    (80, 8), (100, 20), (116, 44), (84, 60), (104, 76), (120, 100),
    (88, 116), (72, 96), (12, 112), (40, 8), (100, 108), (76, 32),
];
