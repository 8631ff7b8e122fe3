use super::{ImageBuffer, ImageError, TissueMask};

/// Per-channel mean over masked pixels, rounded half away from zero.
pub fn mean_fill_color(img: &ImageBuffer, mask: &TissueMask) -> Result<[u8; 3], ImageError> {
    check_dims(img, mask)?;
    let mut sums = [0u64; 3];
    let mut count = 0u64;
    for (p, &keep) in img.pixel_iter().zip(mask.bits()) {
        if keep {
            for c in 0..3 {
                sums[c] += u64::from(p[c]);
            }
            count += 1;
        }
    }
    // Exact integer rounding: floor((2s + n) / 2n).
    Ok(sums.map(|s| ((2 * s + count) / (2 * count)) as u8))
}

/// Replaces every non-tissue pixel with the mean tissue color. Tissue pixels
/// are copied unchanged.
pub fn apply_roi_inpainting(img: &ImageBuffer, mask: &TissueMask) -> Result<ImageBuffer, ImageError> {
    let fill = mean_fill_color(img, mask)?;
    let mut pixels = img.pixels().to_vec();
    for (p, &keep) in pixels.chunks_exact_mut(3).zip(mask.bits()) {
        if !keep {
            p.copy_from_slice(&fill);
        }
    }
    ImageBuffer::new(img.width(), img.height(), pixels)
}

fn check_dims(img: &ImageBuffer, mask: &TissueMask) -> Result<(), ImageError> {
    if img.dims() != mask.dims() {
        return Err(ImageError::DimensionMismatch {
            expected: img.dims(),
            actual: mask.dims(),
        });
    }
    Ok(())
}
