use serde::{Deserialize, Serialize};

use super::DiffusionError;

/// Step count used for full-scale runs.
pub const DEFAULT_STEPS: usize = 1000;
pub const DEFAULT_BETA_START: f64 = 1e-4;
pub const DEFAULT_BETA_END: f64 = 0.02;

/// Precomputed `β_t`, `α_t = 1 - β_t` and `ᾱ_t = ∏_{s≤t} α_s` for `t = 1..=T`.
///
/// Steps are 1-based in the accessors; `ᾱ_0 = 1` so that `t = 0` is the
/// clean sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule {
    betas: Vec<f64>,
    alphas: Vec<f64>,
    alpha_bars: Vec<f64>,
}

impl NoiseSchedule {
    /// Linear `β` from `beta_start` to `beta_end` inclusive.
    pub fn linear(steps: usize, beta_start: f64, beta_end: f64) -> Result<Self, DiffusionError> {
        if steps == 0 {
            return Err(DiffusionError::InvalidSchedule("T must be at least 1".into()));
        }
        if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
            return Err(DiffusionError::InvalidSchedule(format!(
                "need 0 < beta_start <= beta_end < 1, got ({beta_start}, {beta_end})"
            )));
        }
        let betas: Vec<f64> = (0..steps)
            .map(|i| {
                if steps == 1 {
                    beta_start
                } else {
                    beta_start + (beta_end - beta_start) * i as f64 / (steps - 1) as f64
                }
            })
            .collect();
        Ok(Self::from_betas(betas))
    }

    /// Linear schedule with the default endpoints rescaled by `1000 / T`, so
    /// that `ᾱ_T` stays near zero for short chains. At `T = 1000` this is
    /// exactly `(1e-4, 0.02)`.
    pub fn linear_default(steps: usize) -> Result<Self, DiffusionError> {
        let (start, end) = default_beta_range(steps);
        Self::linear(steps, start, end)
    }

    fn from_betas(betas: Vec<f64>) -> Self {
        let alphas: Vec<f64> = betas.iter().map(|b| 1.0 - b).collect();
        let alpha_bars = alphas
            .iter()
            .scan(1.0, |acc, &a| {
                *acc *= a;
                Some(*acc)
            })
            .collect();
        NoiseSchedule {
            betas,
            alphas,
            alpha_bars,
        }
    }

    pub fn steps(&self) -> usize {
        self.betas.len()
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alphas
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bars
    }

    /// `β_t`, `t` in `1..=T`.
    pub fn beta(&self, t: usize) -> f64 {
        self.betas[t - 1]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        self.alphas[t - 1]
    }

    /// `ᾱ_t` for `t` in `0..=T`.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        if t == 0 {
            1.0
        } else {
            self.alpha_bars[t - 1]
        }
    }

    pub(crate) fn check_step(&self, t: usize, allow_zero: bool) -> Result<(), DiffusionError> {
        let lo = if allow_zero { 0 } else { 1 };
        if t < lo || t > self.steps() {
            return Err(DiffusionError::StepOutOfRange {
                t,
                steps: self.steps(),
            });
        }
        Ok(())
    }
}

/// Default `(beta_start, beta_end)` for a `steps`-step chain.
pub fn default_beta_range(steps: usize) -> (f64, f64) {
    let scale = DEFAULT_STEPS as f64 / steps.max(1) as f64;
    (
        (DEFAULT_BETA_START * scale).min(0.5),
        (DEFAULT_BETA_END * scale).min(0.999),
    )
}

/// Linear schedule; see [`NoiseSchedule::linear`].
pub fn make_schedule(steps: usize, beta_start: f64, beta_end: f64) -> Result<NoiseSchedule, DiffusionError> {
    NoiseSchedule::linear(steps, beta_start, beta_end)
}
