use super::net::sigmoid;
use super::tensor::Tensor;
use super::DetectorError;
use crate::image::{GrayImage, Mask};

pub const PROB_CLAMP: f64 = 1e-7;
pub const DEFAULT_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Reduction {
    Mean,
    Sum,
}

fn pixel_bce(p: f64, y: f64) -> f64 {
    let p = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
    -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
}

/// Mean per-pixel binary cross entropy of a probability map.
pub fn bce_loss(pred: &GrayImage, target: &Mask) -> Result<f64, DetectorError> {
    if (pred.height(), pred.width()) != (target.height(), target.width()) {
        return Err(DetectorError::ShapeMismatch(format!(
            "prediction {}x{} vs target {}x{}",
            pred.height(),
            pred.width(),
            target.height(),
            target.width()
        )));
    }
    let n = pred.data().len() as f64;
    let total: f64 = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(&p, &y)| pixel_bce(p, y as f64))
        .sum();
    Ok(total / n)
}

/// Sigmoid followed by clamped BCE, with the gradient taken with respect to
/// the logits. Pixels whose probability is clamped receive zero gradient.
pub fn bce_with_logits(
    logits: &Tensor,
    targets: &[f64],
    reduction: Reduction,
) -> Result<(f64, Tensor), DetectorError> {
    if logits.data.len() != targets.len() {
        return Err(DetectorError::ShapeMismatch(format!(
            "{} logits vs {} targets",
            logits.data.len(),
            targets.len()
        )));
    }
    let scale = match reduction {
        Reduction::Mean => 1.0 / targets.len() as f64,
        Reduction::Sum => 1.0,
    };
    let mut grad = Tensor::zeros(logits.n, logits.c, logits.h, logits.w);
    let mut total = 0.0;
    for ((g, &z), &y) in grad.data.iter_mut().zip(&logits.data).zip(targets) {
        let p = sigmoid(z);
        total += pixel_bce(p, y);
        let clamped = !(PROB_CLAMP..=1.0 - PROB_CLAMP).contains(&p);
        *g = if clamped { 0.0 } else { (p - y) * scale };
    }
    Ok((total * scale, grad))
}

/// Strict `p > threshold` segmentation.
pub fn binarize(prob: &GrayImage, threshold: f64) -> Mask {
    Mask::from_fn(prob.height(), prob.width(), |r, c| prob.get(r, c) > threshold)
}
