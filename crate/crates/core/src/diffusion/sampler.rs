use rand::Rng;
use serde::{Deserialize, Serialize};

use super::process::{forward_sample, normal_vec, reverse_step};
use super::{Denoiser, DiffusionError, NoiseSchedule};

/// Unconditional ancestral sampling from `x_T ~ N(0, I)` down to `x_0`.
pub fn sample<D: Denoiser + ?Sized, R: Rng + ?Sized>(
    den: &D,
    sched: &NoiseSchedule,
    dim: usize,
    rng: &mut R,
) -> Result<Vec<f64>, DiffusionError> {
    let mut x = normal_vec(rng, dim);
    for t in (1..=sched.steps()).rev() {
        x = reverse_step(&x, t, den, sched, rng)?;
    }
    Ok(x)
}

/// Which mask value marks the pixels to regenerate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MaskConvention {
    /// `m = 1` is missing (raindrop), `1 - m` is known.
    #[default]
    MissingIsOne,
    /// Roles swapped: `m = 1` is known.
    KnownIsOne,
}

/// Masked reconstruction mixing both diffusion directions.
///
/// Starting from `x_T ~ N(0, I)`, each step draws the unknown part with the
/// reverse model and the known part by diffusing `x0` directly to `t - 1`.
/// At the last step the known part is `x0` itself, so known pixels of the
/// result equal `x0` exactly.
pub fn inpaint_sample<D: Denoiser + ?Sized, R: Rng + ?Sized>(
    x0: &[f64],
    mask: &[f64],
    den: &D,
    sched: &NoiseSchedule,
    rng: &mut R,
) -> Result<Vec<f64>, DiffusionError> {
    inpaint_sample_with(x0, mask, den, sched, rng, MaskConvention::MissingIsOne)
}

pub fn inpaint_sample_with<D: Denoiser + ?Sized, R: Rng + ?Sized>(
    x0: &[f64],
    mask: &[f64],
    den: &D,
    sched: &NoiseSchedule,
    rng: &mut R,
    convention: MaskConvention,
) -> Result<Vec<f64>, DiffusionError> {
    if x0.len() != mask.len() {
        return Err(DiffusionError::ShapeMismatch(format!(
            "image has {} values, mask has {}",
            x0.len(),
            mask.len()
        )));
    }
    if let Some(&bad) = mask.iter().find(|&&m| m != 0.0 && m != 1.0) {
        return Err(DiffusionError::NonBinaryMask(bad));
    }
    let missing: Vec<bool> = mask
        .iter()
        .map(|&m| match convention {
            MaskConvention::MissingIsOne => m == 1.0,
            MaskConvention::KnownIsOne => m == 0.0,
        })
        .collect();
    if !missing.iter().any(|&m| m) {
        return Ok(x0.to_vec());
    }
    let mut x = normal_vec(rng, x0.len());
    for t in (1..=sched.steps()).rev() {
        let unknown = reverse_step(&x, t, den, sched, rng)?;
        let known = forward_sample(x0, t - 1, sched, rng)?;
        x = missing
            .iter()
            .zip(unknown.into_iter().zip(known))
            .map(|(&miss, (u, k))| if miss { u } else { k })
            .collect();
    }
    Ok(x)
}
