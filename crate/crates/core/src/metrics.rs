//! Fidelity metrics against ground truth: PSNR, SSIM and mask overlap scores.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::image::{GrayImage, Image, Mask};

/// Reported PSNR for identical inputs.
pub const PSNR_CAP_DB: f64 = 100.0;
pub const SSIM_WINDOW: usize = 8;
const SSIM_C1: f64 = 0.01 * 0.01;
const SSIM_C2: f64 = 0.03 * 0.03;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("image {0}x{1} is smaller than the 8x8 SSIM window")]
    TooSmall(usize, usize),
}

/// `10·log10(1 / MSE)` over all samples, capped at [`PSNR_CAP_DB`].
pub fn psnr(a: &Image, b: &Image) -> Result<f64, MetricsError> {
    if !a.same_shape(b) {
        return Err(MetricsError::ShapeMismatch(format!(
            "{}x{}x{} vs {}x{}x{}",
            a.height(),
            a.width(),
            a.channels(),
            b.height(),
            b.width(),
            b.channels()
        )));
    }
    let n = a.data().len().max(1) as f64;
    let mse = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / n;
    if mse == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((10.0 * (1.0 / mse).log10()).min(PSNR_CAP_DB))
}

/// Summed-area table with a zero first row and column.
struct Integral {
    w: usize,
    sums: Vec<f64>,
}

impl Integral {
    fn new(h: usize, w: usize, f: impl Fn(usize, usize) -> f64) -> Self {
        let stride = w + 1;
        let mut sums = vec![0.0; (h + 1) * stride];
        for r in 0..h {
            let mut row = 0.0;
            for c in 0..w {
                row += f(r, c);
                sums[(r + 1) * stride + c + 1] = sums[r * stride + c + 1] + row;
            }
        }
        Integral { w: stride, sums }
    }

    fn window(&self, r: usize, c: usize, k: usize) -> f64 {
        let s = &self.sums;
        s[(r + k) * self.w + c + k] - s[r * self.w + c + k] - s[(r + k) * self.w + c] + s[r * self.w + c]
    }
}

/// Mean SSIM over every 8x8 window (stride 1, uniform weights, population
/// statistics), `C1 = 0.01²`, `C2 = 0.03²`.
pub fn ssim(a: &GrayImage, b: &GrayImage) -> Result<f64, MetricsError> {
    let (h, w) = (a.height(), a.width());
    if h != b.height() || w != b.width() {
        return Err(MetricsError::ShapeMismatch(format!(
            "{h}x{w} vs {}x{}",
            b.height(),
            b.width()
        )));
    }
    let k = SSIM_WINDOW;
    if h < k || w < k {
        return Err(MetricsError::TooSmall(h, w));
    }
    let sa = Integral::new(h, w, |r, c| a.get(r, c));
    let sb = Integral::new(h, w, |r, c| b.get(r, c));
    let saa = Integral::new(h, w, |r, c| a.get(r, c) * a.get(r, c));
    let sbb = Integral::new(h, w, |r, c| b.get(r, c) * b.get(r, c));
    let sab = Integral::new(h, w, |r, c| a.get(r, c) * b.get(r, c));
    let n = (k * k) as f64;
    let mut total = 0.0;
    let mut count = 0usize;
    for r in 0..=h - k {
        for c in 0..=w - k {
            let mu_a = sa.window(r, c, k) / n;
            let mu_b = sb.window(r, c, k) / n;
            let var_a = (saa.window(r, c, k) / n - mu_a * mu_a).max(0.0);
            let var_b = (sbb.window(r, c, k) / n - mu_b * mu_b).max(0.0);
            let cov = sab.window(r, c, k) / n - mu_a * mu_b;
            total += ((2.0 * mu_a * mu_b + SSIM_C1) * (2.0 * cov + SSIM_C2))
                / ((mu_a * mu_a + mu_b * mu_b + SSIM_C1) * (var_a + var_b + SSIM_C2));
            count += 1;
        }
    }
    Ok(total / count as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaskScore {
    pub iou: f64,
    pub precision: f64,
    pub recall: f64,
    pub true_positives: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
}

/// Overlap of a predicted mask with the truth. Empty denominators score 1.
pub fn mask_score(pred: &Mask, truth: &Mask) -> Result<MaskScore, MetricsError> {
    if !pred.same_shape(truth) {
        return Err(MetricsError::ShapeMismatch(format!(
            "{}x{} vs {}x{}",
            pred.height(),
            pred.width(),
            truth.height(),
            truth.width()
        )));
    }
    let (mut tp, mut fp, mut fn_) = (0usize, 0usize, 0usize);
    for (&p, &t) in pred.data().iter().zip(truth.data()) {
        match (p != 0, t != 0) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => {}
        }
    }
    let ratio = |num: usize, den: usize| if den == 0 { 1.0 } else { num as f64 / den as f64 };
    Ok(MaskScore {
        iou: ratio(tp, tp + fp + fn_),
        precision: ratio(tp, tp + fp),
        recall: ratio(tp, tp + fn_),
        true_positives: tp,
        false_positives: fp,
        false_negatives: fn_,
    })
}

/// One line of a batch evaluation report. Mask columns are empty when no
/// ground-truth mask exists.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub image_id: String,
    pub psnr: f64,
    pub ssim: f64,
    pub mask: Option<MaskScore>,
}

impl EvalRow {
    pub const CSV_HEADER: &'static str = "image_id,psnr,ssim,iou,precision,recall";

    pub fn to_csv(&self) -> String {
        let mask = match &self.mask {
            Some(m) => format!("{:.6},{:.6},{:.6}", m.iou, m.precision, m.recall),
            None => ",,".to_string(),
        };
        format!("{},{:.6},{:.6},{mask}", self.image_id, self.psnr, self.ssim)
    }
}

pub fn eval_csv(rows: &[EvalRow]) -> String {
    let mut s = String::from(EvalRow::CSV_HEADER);
    s.push('\n');
    for r in rows {
        s.push_str(&r.to_csv());
        s.push('\n');
    }
    s
}
