use rand::Rng;
use rand_distr::StandardNormal;

use super::{Denoiser, DiffusionError, NoiseSchedule};

/// A point on the diffusion chain.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentState {
    pub x: Vec<f64>,
    pub t: usize,
}

pub(crate) fn normal_vec<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

/// One forward step `x_t = sqrt(1-β_t)·x_{t-1} + sqrt(β_t)·z`.
pub fn forward_step<R: Rng + ?Sized>(
    x_prev: &[f64],
    t: usize,
    sched: &NoiseSchedule,
    rng: &mut R,
) -> Result<Vec<f64>, DiffusionError> {
    sched.check_step(t, false)?;
    let beta = sched.beta(t);
    let keep = (1.0 - beta).sqrt();
    let noise = beta.sqrt();
    Ok(x_prev
        .iter()
        .map(|&x| keep * x + noise * rng.sample::<f64, _>(StandardNormal))
        .collect())
}

/// Closed-form `x_t = sqrt(ᾱ_t)·x_0 + sqrt(1-ᾱ_t)·z`; `t = 0` returns `x0` untouched
/// and draws nothing from `rng`.
pub fn forward_sample<R: Rng + ?Sized>(
    x0: &[f64],
    t: usize,
    sched: &NoiseSchedule,
    rng: &mut R,
) -> Result<Vec<f64>, DiffusionError> {
    sched.check_step(t, true)?;
    if t == 0 {
        return Ok(x0.to_vec());
    }
    let ab = sched.alpha_bar(t);
    Ok(noised(x0, &normal_vec(rng, x0.len()), ab))
}

/// `sqrt(ab)·x0 + sqrt(1-ab)·eps`.
pub(crate) fn noised(x0: &[f64], eps: &[f64], ab: f64) -> Vec<f64> {
    let (s, n) = (ab.sqrt(), (1.0 - ab).sqrt());
    x0.iter().zip(eps).map(|(&x, &e)| s * x + n * e).collect()
}

/// Reverse-step noise level.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ReverseVariance {
    /// `σ_t² = β_t`, with `σ_1 = 0`.
    #[default]
    Beta,
    /// Deterministic mean-only update.
    Zero,
}

/// Posterior mean under the ε-parameterization,
/// `μ = (x_t - β_t / sqrt(1-ᾱ_t) · ε̂) / sqrt(α_t)`.
pub fn reverse_mean(
    x_t: &[f64],
    t: usize,
    eps_hat: &[f64],
    sched: &NoiseSchedule,
) -> Result<Vec<f64>, DiffusionError> {
    sched.check_step(t, false)?;
    if eps_hat.len() != x_t.len() {
        return Err(DiffusionError::ShapeMismatch(format!(
            "denoiser returned {} values for {} inputs",
            eps_hat.len(),
            x_t.len()
        )));
    }
    if eps_hat.iter().any(|v| !v.is_finite()) {
        return Err(DiffusionError::NonFinite(format!("denoiser output at t={t}")));
    }
    let coef = sched.beta(t) / (1.0 - sched.alpha_bar(t)).sqrt();
    let inv_sqrt_alpha = 1.0 / sched.alpha(t).sqrt();
    Ok(x_t
        .iter()
        .zip(eps_hat)
        .map(|(&x, &e)| inv_sqrt_alpha * (x - coef * e))
        .collect())
}

/// One ancestral step `x_{t-1} ~ N(μ_θ(x_t, t), σ_t² I)`.
pub fn reverse_step<D: Denoiser + ?Sized, R: Rng + ?Sized>(
    x_t: &[f64],
    t: usize,
    den: &D,
    sched: &NoiseSchedule,
    rng: &mut R,
) -> Result<Vec<f64>, DiffusionError> {
    reverse_step_with(x_t, t, den, sched, rng, ReverseVariance::Beta)
}

pub fn reverse_step_with<D: Denoiser + ?Sized, R: Rng + ?Sized>(
    x_t: &[f64],
    t: usize,
    den: &D,
    sched: &NoiseSchedule,
    rng: &mut R,
    variance: ReverseVariance,
) -> Result<Vec<f64>, DiffusionError> {
    sched.check_step(t, false)?;
    let eps_hat = den.predict_noise(x_t, t);
    let mut mean = reverse_mean(x_t, t, &eps_hat, sched)?;
    if variance == ReverseVariance::Beta && t > 1 {
        let sigma = sched.beta(t).sqrt();
        for m in mean.iter_mut() {
            *m += sigma * rng.sample::<f64, _>(StandardNormal);
        }
    }
    Ok(mean)
}
