//! Pseudo raindrop masks from a rainy image and its clean ground truth.
//!
//! The residual `R` is formed in one of four ways, converted to gray where
//! needed, and thresholded at an 8-bit level. Signed variants clamp negative
//! differences to zero.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::image::{
    histogram_equalize, photometric_distort, threshold, to_grayscale, GrayImage, Image,
    ImageError, Mask, PhotometricParams,
};

/// The threshold sweep used when comparing residual settings.
pub const THRESHOLD_SWEEP: [u8; 4] = [30, 80, 120, 200];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ResidualOption {
    /// (a) `clamp(A - B)` per RGB channel, then gray.
    SignedRgb,
    /// (b) `|A - B|` per RGB channel, then gray.
    AbsoluteRgb,
    /// (c) `clamp(gray(A) - gray(B))`.
    SignedGray,
    /// (d) `|gray(A) - gray(B)|`.
    AbsoluteGray,
}

impl ResidualOption {
    pub const ALL: [ResidualOption; 4] = [
        ResidualOption::SignedRgb,
        ResidualOption::AbsoluteRgb,
        ResidualOption::SignedGray,
        ResidualOption::AbsoluteGray,
    ];

    pub fn letter(self) -> char {
        match self {
            ResidualOption::SignedRgb => 'a',
            ResidualOption::AbsoluteRgb => 'b',
            ResidualOption::SignedGray => 'c',
            ResidualOption::AbsoluteGray => 'd',
        }
    }

    fn is_signed(self) -> bool {
        matches!(self, ResidualOption::SignedRgb | ResidualOption::SignedGray)
    }
}

impl fmt::Display for ResidualOption {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.letter())
    }
}

impl FromStr for ResidualOption {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "a" | "signed-rgb" => Ok(ResidualOption::SignedRgb),
            "b" | "absolute-rgb" => Ok(ResidualOption::AbsoluteRgb),
            "c" | "signed-gray" => Ok(ResidualOption::SignedGray),
            "d" | "absolute-gray" => Ok(ResidualOption::AbsoluteGray),
            other => Err(format!("unknown residual option '{other}' (expected a, b, c or d)")),
        }
    }
}

/// Optional symmetric preprocessing applied to both images before differencing.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct Preprocess {
    pub equalize: bool,
    pub distort: Option<PhotometricParams>,
}

impl Preprocess {
    pub const NONE: Preprocess = Preprocess {
        equalize: false,
        distort: None,
    };

    fn apply(&self, img: &Image) -> Result<Image, ImageError> {
        let mut out = match self.distort {
            Some(p) => photometric_distort(img, p)?,
            None => img.clone(),
        };
        if self.equalize {
            // Equalize each channel independently so RGB options keep color.
            out = equalize_channels(&out);
        }
        Ok(out)
    }
}

fn equalize_channels(img: &Image) -> Image {
    let (h, w, c) = (img.height(), img.width(), img.channels());
    let planes: Vec<GrayImage> = (0..c)
        .map(|ch| histogram_equalize(&GrayImage::from_fn(h, w, |r, col| img.get(r, col, ch))))
        .collect();
    Image::from_fn(h, w, c, |r, col, ch| planes[ch].get(r, col))
}

#[inline]
fn diff(a: f64, b: f64, signed: bool) -> f64 {
    if signed {
        (a - b).max(0.0)
    } else {
        (a - b).abs()
    }
}

/// Residual of rainy `a` against clean `b` as a gray image in `[0, 1]`.
pub fn residual(a: &Image, b: &Image, option: ResidualOption) -> Result<GrayImage, ImageError> {
    if a.height() != b.height() || a.width() != b.width() {
        return Err(ImageError::DimensionMismatch(format!(
            "rainy image is {}x{}, clean image is {}x{}",
            a.height(),
            a.width(),
            b.height(),
            b.width()
        )));
    }
    let signed = option.is_signed();
    match option {
        ResidualOption::SignedRgb | ResidualOption::AbsoluteRgb => {
            if a.channels() != b.channels() {
                return Err(ImageError::DimensionMismatch(format!(
                    "channel counts differ ({} vs {})",
                    a.channels(),
                    b.channels()
                )));
            }
            let data = a
                .data()
                .iter()
                .zip(b.data())
                .map(|(&x, &y)| diff(x, y, signed))
                .collect();
            let r = Image::from_vec(a.height(), a.width(), a.channels(), data)?;
            Ok(to_grayscale(&r))
        }
        ResidualOption::SignedGray | ResidualOption::AbsoluteGray => {
            let ga = to_grayscale(a);
            let gb = to_grayscale(b);
            let data = ga
                .data()
                .iter()
                .zip(gb.data())
                .map(|(&x, &y)| diff(x, y, signed))
                .collect();
            GrayImage::from_vec(a.height(), a.width(), data)
        }
    }
}

/// `threshold(residual(pre(a), pre(b)), tau)`.
pub fn residual_mask(
    a: &Image,
    b: &Image,
    option: ResidualOption,
    tau: u8,
    preprocess: Preprocess,
) -> Result<Mask, ImageError> {
    let (a, b) = if preprocess == Preprocess::NONE {
        (a.clone(), b.clone())
    } else {
        (preprocess.apply(a)?, preprocess.apply(b)?)
    };
    Ok(threshold(&residual(&a, &b, option)?, tau))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use proptest::prelude::*;
    use rand::Rng;

    fn rgb(h: usize, w: usize, v: f64) -> Image {
        Image::from_fn(h, w, 3, |_, _, _| v)
    }

    fn random_rgb(h: usize, w: usize, seed: u64) -> Image {
        let mut rng = seeded(seed);
        Image::from_fn(h, w, 3, |_, _, _| rng.gen_range(0u8..=255) as f64 / 255.0)
    }

    #[test]
    fn identical_images_give_zero_residual() {
        let a = random_rgb(6, 5, 1);
        for opt in ResidualOption::ALL {
            assert!(residual(&a, &a, opt).unwrap().data().iter().all(|&v| v == 0.0));
            assert!(residual_mask(&a, &a, opt, 0, Preprocess::NONE)
                .unwrap()
                .is_empty());
        }
    }

    #[test]
    fn signed_gray_clamps_absolute_keeps() {
        let a = Image::from_vec(1, 1, 1, vec![0.4]).unwrap();
        let b = Image::from_vec(1, 1, 1, vec![0.6]).unwrap();
        assert_eq!(residual(&a, &b, ResidualOption::SignedGray).unwrap().get(0, 0), 0.0);
        let d = residual(&a, &b, ResidualOption::AbsoluteGray).unwrap().get(0, 0);
        assert!((d - 0.2).abs() < 1e-12);
    }

    #[test]
    fn signed_rgb_arithmetic() {
        let r = residual(&rgb(1, 1, 0.5), &rgb(1, 1, 0.2), ResidualOption::SignedRgb).unwrap();
        assert!((r.get(0, 0) - 0.3).abs() < 1e-12);
    }

    #[test]
    fn dimension_mismatch() {
        assert!(matches!(
            residual(&rgb(2, 2, 0.0), &rgb(2, 3, 0.0), ResidualOption::AbsoluteRgb),
            Err(ImageError::DimensionMismatch(_))
        ));
    }

    #[test]
    fn painted_disk_recovered_exactly() {
        let clean = Image::from_fn(32, 32, 3, |r, c, ch| {
            0.1 + 0.3 * ((r + 2 * c + ch) % 7) as f64 / 7.0
        });
        let inside = |r: usize, c: usize| {
            let dr = r as f64 - 15.0;
            let dc = c as f64 - 12.0;
            dr * dr + dc * dc <= 36.0
        };
        let rainy = Image::from_fn(32, 32, 3, |r, c, ch| {
            clean.get(r, c, ch) + if inside(r, c) { 0.5 } else { 0.0 }
        });
        let truth = Mask::from_fn(32, 32, inside);
        for opt in ResidualOption::ALL {
            let m = residual_mask(&rainy, &clean, opt, 80, Preprocess::NONE).unwrap();
            assert_eq!(m, truth, "option {opt}");
        }
    }

    #[test]
    fn option_parsing() {
        assert_eq!("B".parse::<ResidualOption>().unwrap(), ResidualOption::AbsoluteRgb);
        assert_eq!(
            "signed-gray".parse::<ResidualOption>().unwrap(),
            ResidualOption::SignedGray
        );
        assert!("e".parse::<ResidualOption>().is_err());
    }

    #[test]
    fn preprocessing_keeps_identity_pairs_empty() {
        let a = random_rgb(8, 8, 5);
        let pre = Preprocess {
            equalize: true,
            distort: Some(PhotometricParams {
                brightness_delta: 0.1,
                contrast_factor: 1.2,
            }),
        };
        for opt in ResidualOption::ALL {
            assert!(residual_mask(&a, &a, opt, 0, pre).unwrap().is_empty());
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn threshold_sweep_shrinks(seed_a in any::<u64>(), seed_b in any::<u64>()) {
            let a = random_rgb(6, 6, seed_a);
            let b = random_rgb(6, 6, seed_b);
            for opt in ResidualOption::ALL {
                let masks: Vec<Mask> = THRESHOLD_SWEEP
                    .iter()
                    .map(|&t| residual_mask(&a, &b, opt, t, Preprocess::NONE).unwrap())
                    .collect();
                for pair in masks.windows(2) {
                    prop_assert!(pair[1].is_subset_of(&pair[0]));
                }
            }
        }

        #[test]
        fn absolute_rgb_covers_signed_rgb(seed_a in any::<u64>(), seed_b in any::<u64>(), tau in any::<u8>()) {
            let a = random_rgb(5, 5, seed_a);
            let b = random_rgb(5, 5, seed_b);
            let signed = residual_mask(&a, &b, ResidualOption::SignedRgb, tau, Preprocess::NONE).unwrap();
            let abs = residual_mask(&a, &b, ResidualOption::AbsoluteRgb, tau, Preprocess::NONE).unwrap();
            prop_assert!(signed.is_subset_of(&abs));
        }

        #[test]
        fn options_agree_for_dominating_gray_pairs(levels in proptest::collection::vec((any::<u8>(), any::<u8>()), 16), tau in any::<u8>()) {
            let hi: Vec<f64> = levels.iter().map(|&(x, y)| x.max(y) as f64 / 255.0).collect();
            let lo: Vec<f64> = levels.iter().map(|&(x, y)| x.min(y) as f64 / 255.0).collect();
            let a = Image::from_vec(4, 4, 1, hi).unwrap();
            let b = Image::from_vec(4, 4, 1, lo).unwrap();
            let reference = residual_mask(&a, &b, ResidualOption::SignedRgb, tau, Preprocess::NONE).unwrap();
            for opt in ResidualOption::ALL {
                prop_assert_eq!(&residual_mask(&a, &b, opt, tau, Preprocess::NONE).unwrap(), &reference);
            }
        }
    }
}
