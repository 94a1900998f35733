//! Image and mask containers plus the preprocessing used ahead of mask
//! generation.
//!
//! Intensities are kept as `f64` in `[0, 1]` everywhere; quantization to
//! 8 bits only happens in [`io`].

mod io;
mod ops;

pub use io::{load_image, load_mask, save_image, Raster};
pub use ops::{
    center_crop, center_crop_mask, histogram_equalize, photometric_distort, threshold, to_grayscale,
    PhotometricParams,
};

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Rec.601 luma weights applied to (R, G, B).
pub const LUMA_WEIGHTS: [f64; 3] = [0.299, 0.587, 0.114];

#[derive(Debug, Error)]
pub enum ImageError {
    #[error("no such file: {0}")]
    Missing(PathBuf),
    #[error("unsupported bit depth {0} (only 8-bit images are supported)")]
    UnsupportedBitDepth(u32),
    #[error("unsupported color type {0} (expected gray or RGB without alpha)")]
    UnsupportedColorType(String),
    #[error("corrupt header: {0}")]
    CorruptHeader(String),
    #[error("unrecognized image format for {0}")]
    UnknownFormat(PathBuf),
    #[error("mask contains value {0}; masks must only hold 0 and 255")]
    InvalidMask(u8),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("crop {crop_h}x{crop_w} does not fit in {height}x{width} image")]
    CropTooLarge {
        crop_h: usize,
        crop_w: usize,
        height: usize,
        width: usize,
    },
    #[error("parameter out of range: {0}")]
    OutOfRange(String),
    #[error("cannot write {path}: {source}")]
    Write {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl ImageError {
    /// Stable numeric code per failure kind, used for CLI exit statuses.
    pub fn code(&self) -> i32 {
        match self {
            ImageError::Missing(_) => 10,
            ImageError::UnsupportedBitDepth(_) => 11,
            ImageError::UnsupportedColorType(_) => 12,
            ImageError::CorruptHeader(_) => 13,
            ImageError::UnknownFormat(_) => 14,
            ImageError::InvalidMask(_) => 15,
            ImageError::DimensionMismatch(_) => 16,
            ImageError::CropTooLarge { .. } => 17,
            ImageError::OutOfRange(_) => 18,
            ImageError::Write { .. } => 19,
            ImageError::Io { .. } => 20,
        }
    }
}

/// Row-major `H x W x C` image with `C` in `{1, 3}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Image {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn new(height: usize, width: usize, channels: usize) -> Self {
        assert!(channels == 1 || channels == 3, "channels must be 1 or 3");
        Image {
            height,
            width,
            channels,
            data: vec![0.0; height * width * channels],
        }
    }

    /// Builds an image from raw intensities, clamping each to `[0, 1]`.
    pub fn from_vec(
        height: usize,
        width: usize,
        channels: usize,
        data: Vec<f64>,
    ) -> Result<Self, ImageError> {
        if channels != 1 && channels != 3 {
            return Err(ImageError::DimensionMismatch(format!(
                "channel count {channels} is not 1 or 3"
            )));
        }
        if data.len() != height * width * channels {
            return Err(ImageError::DimensionMismatch(format!(
                "{} values for a {height}x{width}x{channels} image",
                data.len()
            )));
        }
        let data = data.into_iter().map(clamp_unit).collect();
        Ok(Image {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn from_fn(
        height: usize,
        width: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Self {
        assert!(channels == 1 || channels == 3, "channels must be 1 or 3");
        let mut data = Vec::with_capacity(height * width * channels);
        for r in 0..height {
            for c in 0..width {
                for ch in 0..channels {
                    data.push(clamp_unit(f(r, c, ch)));
                }
            }
        }
        Image {
            height,
            width,
            channels,
            data,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn same_shape(&self, other: &Image) -> bool {
        self.height == other.height && self.width == other.width && self.channels == other.channels
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize, ch: usize) -> f64 {
        self.data[(row * self.width + col) * self.channels + ch]
    }

    /// Stores `value` clamped to `[0, 1]`.
    #[inline]
    pub fn set(&mut self, row: usize, col: usize, ch: usize, value: f64) {
        let w = self.width;
        let c = self.channels;
        self.data[(row * w + col) * c + ch] = clamp_unit(value);
    }

    pub fn pixel(&self, row: usize, col: usize) -> &[f64] {
        let i = (row * self.width + col) * self.channels;
        &self.data[i..i + self.channels]
    }

    /// Bilinear sample at fractional `(row, col)`; `None` outside the pixel
    /// grid `[0, H-1] x [0, W-1]`.
    pub fn bilinear(&self, row: f64, col: f64, ch: usize) -> Option<f64> {
        if !(row >= 0.0 && col >= 0.0) {
            return None;
        }
        let max_r = (self.height - 1) as f64;
        let max_c = (self.width - 1) as f64;
        if row > max_r || col > max_c {
            return None;
        }
        let r0 = row.floor() as usize;
        let c0 = col.floor() as usize;
        let r1 = (r0 + 1).min(self.height - 1);
        let c1 = (c0 + 1).min(self.width - 1);
        let fr = row - r0 as f64;
        let fc = col - c0 as f64;
        let top = self.get(r0, c0, ch) * (1.0 - fc) + self.get(r0, c1, ch) * fc;
        let bottom = self.get(r1, c0, ch) * (1.0 - fc) + self.get(r1, c1, ch) * fc;
        Some(top * (1.0 - fr) + bottom * fr)
    }

    /// Rounds every intensity to the nearest 8-bit level.
    pub fn quantized(&self) -> Image {
        Image {
            data: self.data.iter().map(|&v| quantize(v) as f64 / 255.0).collect(),
            ..self.clone()
        }
    }

    pub fn mean(&self) -> f64 {
        if self.data.is_empty() {
            return 0.0;
        }
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }
}

impl From<GrayImage> for Image {
    fn from(g: GrayImage) -> Self {
        Image {
            height: g.height,
            width: g.width,
            channels: 1,
            data: g.data,
        }
    }
}

/// Single-channel image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrayImage {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl GrayImage {
    pub fn new(height: usize, width: usize) -> Self {
        GrayImage {
            height,
            width,
            data: vec![0.0; height * width],
        }
    }

    pub fn from_vec(height: usize, width: usize, data: Vec<f64>) -> Result<Self, ImageError> {
        if data.len() != height * width {
            return Err(ImageError::DimensionMismatch(format!(
                "{} values for a {height}x{width} gray image",
                data.len()
            )));
        }
        Ok(GrayImage {
            height,
            width,
            data: data.into_iter().map(clamp_unit).collect(),
        })
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for r in 0..height {
            for c in 0..width {
                data.push(clamp_unit(f(r, c)));
            }
        }
        GrayImage {
            height,
            width,
            data,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.width + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: f64) {
        let w = self.width;
        self.data[row * w + col] = clamp_unit(value);
    }

    /// Reinterprets a 1-channel [`Image`]; `None` for RGB input.
    pub fn from_image(img: &Image) -> Option<GrayImage> {
        (img.channels == 1).then(|| GrayImage {
            height: img.height,
            width: img.width,
            data: img.data.clone(),
        })
    }

    pub fn mean(&self) -> f64 {
        if self.data.is_empty() {
            return 0.0;
        }
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }
}

/// Binary raindrop map: `1` marks raindrop / missing pixels, `0` background.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Mask {
    height: usize,
    width: usize,
    data: Vec<u8>,
}

impl Mask {
    pub fn new(height: usize, width: usize) -> Self {
        Mask {
            height,
            width,
            data: vec![0; height * width],
        }
    }

    pub fn filled(height: usize, width: usize, value: bool) -> Self {
        Mask {
            height,
            width,
            data: vec![value as u8; height * width],
        }
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for r in 0..height {
            for c in 0..width {
                data.push(f(r, c) as u8);
            }
        }
        Mask {
            height,
            width,
            data,
        }
    }

    /// Accepts only 0/1 values.
    pub fn from_vec(height: usize, width: usize, data: Vec<u8>) -> Result<Self, ImageError> {
        if data.len() != height * width {
            return Err(ImageError::DimensionMismatch(format!(
                "{} values for a {height}x{width} mask",
                data.len()
            )));
        }
        if let Some(&bad) = data.iter().find(|&&v| v > 1) {
            return Err(ImageError::InvalidMask(bad));
        }
        Ok(Mask {
            height,
            width,
            data,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> bool {
        self.data[row * self.width + col] != 0
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: bool) {
        let w = self.width;
        self.data[row * w + col] = value as u8;
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&v| v != 0).count()
    }

    pub fn is_empty(&self) -> bool {
        self.count() == 0
    }

    pub fn same_shape(&self, other: &Mask) -> bool {
        self.height == other.height && self.width == other.width
    }

    /// Pixel-wise `self ⊆ other`. Shapes must agree.
    pub fn is_subset_of(&self, other: &Mask) -> bool {
        self.same_shape(other)
            && self
                .data
                .iter()
                .zip(&other.data)
                .all(|(&a, &b)| a == 0 || b != 0)
    }

    pub fn union(&self, other: &Mask) -> Mask {
        assert!(self.same_shape(other), "mask shapes differ");
        Mask {
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| a | b)
                .collect(),
            ..self.clone()
        }
    }

    /// Mask as `0.0 / 1.0` values, repeated over `channels`.
    pub fn to_f64(&self, channels: usize) -> Vec<f64> {
        self.data
            .iter()
            .flat_map(|&v| std::iter::repeat(v as f64).take(channels))
            .collect()
    }
}

#[inline]
pub(crate) fn clamp_unit(v: f64) -> f64 {
    if v.is_nan() {
        0.0
    } else {
        v.clamp(0.0, 1.0)
    }
}

#[inline]
pub(crate) fn quantize(v: f64) -> u8 {
    (clamp_unit(v) * 255.0).round() as u8
}
