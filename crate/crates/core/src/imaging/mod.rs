//! Slide image handling: decoding, tissue detection, ROI in-painting,
//! bilinear resampling and heatmap overlays.
//!
//! Everything here is a pure function of its inputs.

mod inpaint;
mod mask;
mod overlay;
mod resample;

use std::fmt;
use std::io::Cursor;
use std::str::FromStr;

use image::{ImageFormat, RgbImage};
use ndarray::Array3;
use thiserror::Error;

pub use inpaint::{apply_roi_inpainting, mean_fill_color};
pub use mask::{compute_tissue_mask, grayscale, otsu_threshold, MaskParams, TissueMask};
pub use overlay::{colormap, render_overlay};
pub use resample::{resize_to_float, upsample_bilinear};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ImageError {
    #[error("unsupported image format: {0}")]
    UnsupportedFormat(String),
    #[error("corrupt image: {0}")]
    CorruptImage(String),
    #[error("invalid image dimensions {width}x{height} for {len} bytes")]
    InvalidDimensions { width: u32, height: u32, len: usize },
    #[error("dimension mismatch: expected {expected:?}, got {actual:?}")]
    DimensionMismatch {
        expected: (usize, usize),
        actual: (usize, usize),
    },
    #[error("value out of range: {0}")]
    ValueOutOfRange(f64),
    #[error("no tissue found")]
    NoTissueFound,
    #[error("invalid mask parameters: {0}")]
    InvalidMaskParams(String),
    #[error("failed to encode image: {0}")]
    Encode(String),
}

/// Decoded 8-bit RGB raster, row-major, three bytes per pixel.
#[derive(Clone, PartialEq, Eq)]
pub struct ImageBuffer {
    width: u32,
    height: u32,
    pixels: Vec<u8>,
}

impl ImageBuffer {
    pub fn new(width: u32, height: u32, pixels: Vec<u8>) -> Result<Self, ImageError> {
        let expected = width as usize * height as usize * 3;
        if width == 0 || height == 0 || pixels.len() != expected {
            return Err(ImageError::InvalidDimensions {
                width,
                height,
                len: pixels.len(),
            });
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    pub fn filled(width: u32, height: u32, rgb: [u8; 3]) -> Result<Self, ImageError> {
        Self::from_fn(width, height, |_, _| rgb)
    }

    /// Builds an image by evaluating `f(x, y)` for every pixel.
    pub fn from_fn(
        width: u32,
        height: u32,
        mut f: impl FnMut(u32, u32) -> [u8; 3],
    ) -> Result<Self, ImageError> {
        let mut pixels = Vec::with_capacity(width as usize * height as usize * 3);
        for y in 0..height {
            for x in 0..width {
                pixels.extend_from_slice(&f(x, y));
            }
        }
        Self::new(width, height, pixels)
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    /// `(height, width)` as array dimensions.
    pub fn dims(&self) -> (usize, usize) {
        (self.height as usize, self.width as usize)
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn into_pixels(self) -> Vec<u8> {
        self.pixels
    }

    pub fn pixel(&self, x: u32, y: u32) -> [u8; 3] {
        let i = self.offset(x, y);
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    pub fn set_pixel(&mut self, x: u32, y: u32, rgb: [u8; 3]) {
        let i = self.offset(x, y);
        self.pixels[i..i + 3].copy_from_slice(&rgb);
    }

    pub fn pixel_iter(&self) -> impl Iterator<Item = [u8; 3]> + '_ {
        self.pixels.chunks_exact(3).map(|p| [p[0], p[1], p[2]])
    }

    fn offset(&self, x: u32, y: u32) -> usize {
        (y as usize * self.width as usize + x as usize) * 3
    }

    /// `(H, W, 3)` array with channel values scaled to `[0, 1]`.
    pub fn to_unit_float(&self) -> Array3<f64> {
        let (h, w) = self.dims();
        Array3::from_shape_fn((h, w, 3), |(y, x, c)| {
            f64::from(self.pixels[(y * w + x) * 3 + c]) / 255.0
        })
    }

    /// Encodes as an 8-bit RGB PNG without alpha.
    pub fn to_png_bytes(&self) -> Result<Vec<u8>, ImageError> {
        let rgb = RgbImage::from_raw(self.width, self.height, self.pixels.clone())
            .ok_or_else(|| ImageError::Encode("buffer size mismatch".into()))?;
        let mut out = Cursor::new(Vec::new());
        rgb.write_to(&mut out, ImageFormat::Png)
            .map_err(|e| ImageError::Encode(e.to_string()))?;
        Ok(out.into_inner())
    }
}

impl fmt::Debug for ImageBuffer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ImageBuffer")
            .field("width", &self.width)
            .field("height", &self.height)
            .finish_non_exhaustive()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ImageFormatHint {
    Jpeg,
    Png,
    #[default]
    Auto,
}

impl FromStr for ImageFormatHint {
    type Err = ImageError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "jpeg" | "jpg" => Ok(Self::Jpeg),
            "png" => Ok(Self::Png),
            "auto" => Ok(Self::Auto),
            other => Err(ImageError::UnsupportedFormat(other.to_string())),
        }
    }
}

/// Decodes JPEG or PNG bytes into an RGB raster. Alpha is discarded and
/// grayscale is expanded to three channels.
pub fn decode_image(bytes: &[u8], hint: ImageFormatHint) -> Result<ImageBuffer, ImageError> {
    if bytes.is_empty() {
        return Err(ImageError::CorruptImage("empty input".into()));
    }
    let format = match hint {
        ImageFormatHint::Jpeg => ImageFormat::Jpeg,
        ImageFormatHint::Png => ImageFormat::Png,
        ImageFormatHint::Auto => match image::guess_format(bytes) {
            Ok(f @ (ImageFormat::Jpeg | ImageFormat::Png)) => f,
            Ok(other) => return Err(ImageError::UnsupportedFormat(format!("{other:?}"))),
            Err(_) => return Err(ImageError::CorruptImage("unrecognised image signature".into())),
        },
    };
    let decoded = image::load_from_memory_with_format(bytes, format)
        .map_err(|e| ImageError::CorruptImage(e.to_string()))?;
    let rgb = decoded.to_rgb8();
    let (w, h) = rgb.dimensions();
    ImageBuffer::new(w, h, rgb.into_raw())
}
