//! Mammogram preprocessing: grayscale PNG decoding, Otsu background removal,
//! breast ROI cropping, aspect-preserving resize with centered zero padding and
//! intensity normalization, plus RGB export of encoded images.
//!
//! All operations are pure functions over owned buffers.

mod otsu;
mod png_io;
mod resize;
mod roi;

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::Scalar;

pub use otsu::otsu_threshold;
pub use png_io::{
    decode_gray_png, decode_rgb_png, encode_gray_png, encode_rgb_png, load_png16, load_rgb_png,
    write_gray_png, write_rgb_png, RawRgbImage,
};
pub use resize::{fitted_extent, resize_pad_normalize, DEFAULT_TARGET_SIZE};
pub use roi::{crop_to_roi, largest_component};

#[derive(Debug, Error)]
pub enum ImagingError {
    #[error("image file not found: {0}")]
    NotFound(PathBuf),
    #[error("not grayscale: PNG color type is {0}")]
    NotGrayscale(String),
    #[error("not RGB: PNG color type is {0}")]
    NotRgb(String),
    #[error("unsupported bit depth {0} (expected 8 or 16)")]
    UnsupportedBitDepth(u8),
    #[error("corrupt PNG stream: {0}")]
    Corrupt(String),
    #[error("degenerate histogram: image has fewer than two distinct intensities")]
    DegenerateHistogram,
    #[error("no foreground pixels above threshold {0}")]
    NoForeground(u16),
    #[error("zero-dimension image ({width}x{height})")]
    ZeroDimension { width: usize, height: usize },
    #[error("invalid image: {0}")]
    Invalid(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, ImagingError>;

/// Supported sample depths.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum BitDepth {
    Eight,
    Sixteen,
}

impl BitDepth {
    pub fn bits(self) -> u8 {
        match self {
            BitDepth::Eight => 8,
            BitDepth::Sixteen => 16,
        }
    }

    /// Largest representable sample, `2^bits - 1`.
    pub fn max_value(self) -> u16 {
        match self {
            BitDepth::Eight => u8::MAX as u16,
            BitDepth::Sixteen => u16::MAX,
        }
    }
}

impl TryFrom<u8> for BitDepth {
    type Error = ImagingError;

    fn try_from(bits: u8) -> Result<Self> {
        match bits {
            8 => Ok(BitDepth::Eight),
            16 => Ok(BitDepth::Sixteen),
            other => Err(ImagingError::UnsupportedBitDepth(other)),
        }
    }
}

impl From<BitDepth> for u8 {
    fn from(d: BitDepth) -> u8 {
        d.bits()
    }
}

/// Axis-aligned box in pixel coordinates of some source image.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x: usize,
    pub y: usize,
    pub w: usize,
    pub h: usize,
}

impl BoundingBox {
    pub fn full(width: usize, height: usize) -> Self {
        BoundingBox { x: 0, y: 0, w: width, h: height }
    }
}

/// Single-channel integer image as decoded from disk, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawImage {
    width: usize,
    height: usize,
    bit_depth: BitDepth,
    pixels: Vec<u16>,
}

impl RawImage {
    pub fn new(width: usize, height: usize, bit_depth: BitDepth, pixels: Vec<u16>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(ImagingError::ZeroDimension { width, height });
        }
        if pixels.len() != width * height {
            return Err(ImagingError::Invalid(format!(
                "pixel count {} does not match {width}x{height}",
                pixels.len()
            )));
        }
        let max = bit_depth.max_value();
        if let Some(p) = pixels.iter().find(|&&p| p > max) {
            return Err(ImagingError::Invalid(format!(
                "pixel value {p} exceeds {}-bit range",
                bit_depth.bits()
            )));
        }
        Ok(RawImage { width, height, bit_depth, pixels })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn bit_depth(&self) -> BitDepth {
        self.bit_depth
    }

    pub fn pixels(&self) -> &[u16] {
        &self.pixels
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u16 {
        self.pixels[y * self.width + x]
    }

    /// Copies the pixels inside `bbox`.
    pub fn crop(&self, bbox: BoundingBox) -> Result<RawImage> {
        if bbox.w == 0 || bbox.h == 0 || bbox.x + bbox.w > self.width || bbox.y + bbox.h > self.height {
            return Err(ImagingError::Invalid(format!(
                "crop box {bbox:?} outside {}x{} image",
                self.width, self.height
            )));
        }
        let mut pixels = Vec::with_capacity(bbox.w * bbox.h);
        for y in bbox.y..bbox.y + bbox.h {
            let row = y * self.width;
            pixels.extend_from_slice(&self.pixels[row + bbox.x..row + bbox.x + bbox.w]);
        }
        RawImage::new(bbox.w, bbox.h, self.bit_depth, pixels)
    }
}

/// Network-ready single-channel image with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PreprocessedImage<T: Scalar> {
    pub height: usize,
    pub width: usize,
    /// Row-major intensities.
    pub values: Vec<T>,
    /// Region of the original image the content was taken from.
    pub source_crop: BoundingBox,
}

impl<T: Scalar> PreprocessedImage<T> {
    pub fn new(height: usize, width: usize, values: Vec<T>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(ImagingError::ZeroDimension { width, height });
        }
        if values.len() != height * width {
            return Err(ImagingError::Invalid(format!(
                "value count {} does not match {height}x{width}",
                values.len()
            )));
        }
        if values.iter().any(|v| !(*v >= T::zero() && *v <= T::one())) {
            return Err(ImagingError::Invalid("values must lie in [0, 1]".into()));
        }
        Ok(PreprocessedImage { height, width, values, source_crop: BoundingBox::full(width, height) })
    }

    /// Quantizes to a 16-bit grayscale raster (round half up).
    pub fn to_raw16(&self) -> RawImage {
        let pixels = self.values.iter().map(|v| quantize(v.f64(), BitDepth::Sixteen)).collect();
        RawImage { width: self.width, height: self.height, bit_depth: BitDepth::Sixteen, pixels }
    }
}

/// Three planar channels with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RgbImage<T: Scalar> {
    height: usize,
    width: usize,
    /// Planar storage: channel-major, then row-major.
    data: Vec<T>,
}

impl<T: Scalar> RgbImage<T> {
    pub fn from_planar(height: usize, width: usize, data: Vec<T>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(ImagingError::ZeroDimension { width, height });
        }
        if data.len() != 3 * height * width {
            return Err(ImagingError::Invalid(format!(
                "planar length {} does not match 3x{height}x{width}",
                data.len()
            )));
        }
        if data.iter().any(|v| !(*v >= T::zero() && *v <= T::one())) {
            return Err(ImagingError::Invalid("channel values must lie in [0, 1]".into()));
        }
        Ok(RgbImage { height, width, data })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channel(&self, c: usize) -> &[T] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }

    pub fn planar(&self) -> &[T] {
        &self.data
    }

    pub fn into_planar(self) -> Vec<T> {
        self.data
    }

    pub fn pixel(&self, x: usize, y: usize) -> [T; 3] {
        let i = y * self.width + x;
        let n = self.height * self.width;
        [self.data[i], self.data[n + i], self.data[2 * n + i]]
    }

    /// Rebuilds an image from a decoded PNG, scaling samples to `[0, 1]`.
    pub fn from_raw(raw: &RawRgbImage) -> Self {
        let n = raw.width * raw.height;
        let scale = raw.bit_depth.max_value() as f64;
        let mut data = vec![T::zero(); 3 * n];
        for (i, px) in raw.pixels.chunks_exact(3).enumerate() {
            for c in 0..3 {
                data[c * n + i] = T::lit(px[c] as f64 / scale);
            }
        }
        RgbImage { height: raw.height, width: raw.width, data }
    }
}

/// `round(v * (2^bits - 1))` with halves rounded up, clamped to range.
pub fn quantize(v: f64, depth: BitDepth) -> u16 {
    let max = depth.max_value() as f64;
    let scaled = (v.clamp(0.0, 1.0) * max + 0.5).floor();
    scaled.min(max) as u16
}

/// Otsu threshold, largest-component crop and resize/pad/normalize in one call.
pub fn preprocess<T: Scalar>(image: &RawImage, target_h: usize, target_w: usize) -> Result<PreprocessedImage<T>> {
    let threshold = otsu_threshold(image)?;
    let (cropped, bbox) = crop_to_roi(image, threshold)?;
    let mut out = resize_pad_normalize(&cropped, target_h, target_w)?;
    out.source_crop = bbox;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantize_rounds_half_up() {
        assert_eq!(quantize(0.0, BitDepth::Eight), 0);
        assert_eq!(quantize(1.0, BitDepth::Eight), 255);
        // 0.5 * 255 = 127.5 -> 128
        assert_eq!(quantize(0.5, BitDepth::Eight), 128);
        assert_eq!(quantize(1.0, BitDepth::Sixteen), 65535);
    }

    #[test]
    fn raw_image_rejects_out_of_range_pixels() {
        assert!(RawImage::new(1, 1, BitDepth::Eight, vec![256]).is_err());
        assert!(RawImage::new(2, 1, BitDepth::Eight, vec![1]).is_err());
        assert!(matches!(
            RawImage::new(0, 1, BitDepth::Eight, vec![]),
            Err(ImagingError::ZeroDimension { .. })
        ));
    }

    #[test]
    fn crop_copies_the_box() {
        let img = RawImage::new(3, 3, BitDepth::Eight, (0..9).collect()).unwrap();
        let c = img.crop(BoundingBox { x: 1, y: 1, w: 2, h: 2 }).unwrap();
        assert_eq!(c.pixels(), &[4, 5, 7, 8]);
    }

    #[test]
    fn preprocess_removes_background_border() {
        // 8x8 dark frame with a bright 4x2 blob.
        let mut px = vec![3u16; 64];
        for y in 2..6 {
            for x in 3..5 {
                px[y * 8 + x] = 200;
            }
        }
        let img = RawImage::new(8, 8, BitDepth::Eight, px).unwrap();
        let p: PreprocessedImage<f64> = preprocess(&img, 8, 8).unwrap();
        assert_eq!(p.source_crop, BoundingBox { x: 3, y: 2, w: 2, h: 4 });
        // 4x2 content scaled to 8x4, centered with 2 padding columns per side.
        assert_eq!(p.values[0], 0.0);
        assert!((p.values[2] - 200.0 / 255.0).abs() < 1e-12);
    }
}
