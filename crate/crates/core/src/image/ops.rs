use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{quantize, GrayImage, Image, ImageError, Mask, LUMA_WEIGHTS};
use crate::rng::seeded;

/// Rec.601 luma. A single-channel image comes back unchanged.
pub fn to_grayscale(img: &Image) -> GrayImage {
    if img.channels() == 1 {
        return GrayImage::from_image(img).expect("single channel");
    }
    let data = img
        .data()
        .chunks_exact(3)
        .map(|px| LUMA_WEIGHTS[0] * px[0] + LUMA_WEIGHTS[1] * px[1] + LUMA_WEIGHTS[2] * px[2])
        .collect();
    GrayImage::from_vec(img.height(), img.width(), data).expect("shape preserved")
}

/// Classic 256-bin CDF remapping. Images with a single occupied level are
/// returned unchanged.
pub fn histogram_equalize(img: &GrayImage) -> GrayImage {
    let n = img.data().len();
    if n == 0 {
        return img.clone();
    }
    let levels: Vec<u8> = img.data().iter().map(|&v| quantize(v)).collect();
    let mut hist = [0usize; 256];
    for &l in &levels {
        hist[l as usize] += 1;
    }
    let mut cdf = [0usize; 256];
    let mut acc = 0;
    for (bin, count) in hist.iter().enumerate() {
        acc += count;
        cdf[bin] = acc;
    }
    let cdf_min = hist
        .iter()
        .zip(cdf.iter())
        .find(|(&h, _)| h > 0)
        .map(|(_, &c)| c)
        .unwrap_or(0);
    if cdf_min == n {
        return img.clone();
    }
    let denom = (n - cdf_min) as f64;
    let lut: Vec<f64> = cdf
        .iter()
        .map(|&c| {
            let num = c.saturating_sub(cdf_min) as f64;
            (255.0 * num / denom).round() / 255.0
        })
        .collect();
    let data = levels.iter().map(|&l| lut[l as usize]).collect();
    GrayImage::from_vec(img.height(), img.width(), data).expect("shape preserved")
}

/// Affine brightness/contrast distortion parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhotometricParams {
    /// Additive offset in `[-0.5, 0.5]`.
    pub brightness_delta: f64,
    /// Contrast gain about mid-gray, in `[0.5, 1.5]`.
    pub contrast_factor: f64,
}

impl PhotometricParams {
    pub const IDENTITY: PhotometricParams = PhotometricParams {
        brightness_delta: 0.0,
        contrast_factor: 1.0,
    };

    pub fn validate(&self) -> Result<(), ImageError> {
        if !(-0.5..=0.5).contains(&self.brightness_delta) {
            return Err(ImageError::OutOfRange(format!(
                "brightness_delta {} outside [-0.5, 0.5]",
                self.brightness_delta
            )));
        }
        if !(0.5..=1.5).contains(&self.contrast_factor) {
            return Err(ImageError::OutOfRange(format!(
                "contrast_factor {} outside [0.5, 1.5]",
                self.contrast_factor
            )));
        }
        Ok(())
    }

    /// Draws parameters uniformly from `[-max_delta, max_delta]` and
    /// `[1 - max_contrast_dev, 1 + max_contrast_dev]`, reproducibly from `seed`.
    pub fn sample(seed: u64, max_delta: f64, max_contrast_dev: f64) -> Result<Self, ImageError> {
        let max_delta = max_delta.abs();
        let max_contrast_dev = max_contrast_dev.abs();
        if max_delta > 0.5 || max_contrast_dev > 0.5 {
            return Err(ImageError::OutOfRange(
                "sampling ranges exceed the allowed distortion bounds".into(),
            ));
        }
        let mut rng = seeded(seed);
        let brightness_delta = if max_delta > 0.0 {
            rng.gen_range(-max_delta..=max_delta)
        } else {
            0.0
        };
        let contrast_factor = if max_contrast_dev > 0.0 {
            rng.gen_range(1.0 - max_contrast_dev..=1.0 + max_contrast_dev)
        } else {
            1.0
        };
        Ok(PhotometricParams {
            brightness_delta,
            contrast_factor,
        })
    }
}

/// `out = clamp(contrast * (in - 0.5) + 0.5 + brightness)` on every channel.
pub fn photometric_distort(img: &Image, params: PhotometricParams) -> Result<Image, ImageError> {
    params.validate()?;
    let data = img
        .data()
        .iter()
        .map(|&v| params.contrast_factor * (v - 0.5) + 0.5 + params.brightness_delta)
        .collect();
    Image::from_vec(img.height(), img.width(), img.channels(), data)
}

fn crop_origin(
    height: usize,
    width: usize,
    out_h: usize,
    out_w: usize,
) -> Result<(usize, usize), ImageError> {
    if out_h > height || out_w > width {
        return Err(ImageError::CropTooLarge {
            crop_h: out_h,
            crop_w: out_w,
            height,
            width,
        });
    }
    Ok(((height - out_h) / 2, (width - out_w) / 2))
}

/// Centered `out_h x out_w` window; top-left is `(⌊(H-h)/2⌋, ⌊(W-w)/2⌋)`.
pub fn center_crop(img: &Image, out_h: usize, out_w: usize) -> Result<Image, ImageError> {
    let (top, left) = crop_origin(img.height(), img.width(), out_h, out_w)?;
    Ok(Image::from_fn(out_h, out_w, img.channels(), |r, c, ch| {
        img.get(top + r, left + c, ch)
    }))
}

pub fn center_crop_mask(mask: &Mask, out_h: usize, out_w: usize) -> Result<Mask, ImageError> {
    let (top, left) = crop_origin(mask.height(), mask.width(), out_h, out_w)?;
    Ok(Mask::from_fn(out_h, out_w, |r, c| mask.get(top + r, left + c)))
}

/// Pixels whose 8-bit level is strictly above `tau` become raindrop (1).
pub fn threshold(img: &GrayImage, tau: u8) -> Mask {
    let data = img.data().iter().map(|&v| (quantize(v) > tau) as u8).collect();
    Mask::from_vec(img.height(), img.width(), data).expect("binary values")
}
