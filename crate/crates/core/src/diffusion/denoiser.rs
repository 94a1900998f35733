use super::NoiseSchedule;

/// Noise predictor `ε̂(x_t, t)` driving the reverse process.
pub trait Denoiser: Sync {
    /// Predicted noise, same length as `x_t`, for step `t` in `1..=T`.
    fn predict_noise(&self, x_t: &[f64], t: usize) -> Vec<f64>;
}

impl<D: Denoiser + ?Sized> Denoiser for &D {
    fn predict_noise(&self, x_t: &[f64], t: usize) -> Vec<f64> {
        (**self).predict_noise(x_t, t)
    }
}

impl<D: Denoiser + ?Sized> Denoiser for Box<D> {
    fn predict_noise(&self, x_t: &[f64], t: usize) -> Vec<f64> {
        (**self).predict_noise(x_t, t)
    }
}

/// Always predicts zero noise.
#[derive(Debug, Clone, Copy, Default)]
pub struct ZeroDenoiser;

impl Denoiser for ZeroDenoiser {
    fn predict_noise(&self, x_t: &[f64], _t: usize) -> Vec<f64> {
        vec![0.0; x_t.len()]
    }
}

/// Bayes-optimal noise predictor when the data is `N(mu0, sigma0² I)`.
///
/// With `ab = ᾱ_t`, the posterior mean of the clean sample is
/// `x̂0 = (sigma0²·sqrt(ab)·x_t + (1-ab)·mu0) / (ab·sigma0² + 1 - ab)` and the
/// implied noise is `(x_t - sqrt(ab)·x̂0) / sqrt(1-ab)`.
#[derive(Debug, Clone, PartialEq)]
pub struct AnalyticGaussianDenoiser {
    mu0: Vec<f64>,
    sigma0: f64,
    schedule: NoiseSchedule,
}

impl AnalyticGaussianDenoiser {
    /// `mu0` of length 1 broadcasts over any input length.
    pub fn new(mu0: Vec<f64>, sigma0: f64, schedule: NoiseSchedule) -> Self {
        assert!(sigma0 > 0.0, "sigma0 must be positive");
        assert!(!mu0.is_empty(), "mu0 must not be empty");
        AnalyticGaussianDenoiser {
            mu0,
            sigma0,
            schedule,
        }
    }

    /// Fits `mu0` per coordinate and a pooled `sigma0` to `samples`.
    pub fn fit(samples: &[Vec<f64>], schedule: NoiseSchedule) -> Option<Self> {
        let first = samples.first()?;
        let n = samples.len() as f64;
        let dim = first.len();
        let mut mu = vec![0.0; dim];
        for s in samples {
            for (m, v) in mu.iter_mut().zip(s) {
                *m += v / n;
            }
        }
        let mut var = 0.0;
        for s in samples {
            for (m, v) in mu.iter().zip(s) {
                var += (v - m) * (v - m);
            }
        }
        var /= n * dim as f64;
        let sigma = var.sqrt().max(1e-3);
        Some(AnalyticGaussianDenoiser::new(mu, sigma, schedule))
    }

    pub fn mu0(&self) -> &[f64] {
        &self.mu0
    }

    pub fn sigma0(&self) -> f64 {
        self.sigma0
    }

    fn mu_at(&self, i: usize) -> f64 {
        if self.mu0.len() == 1 {
            self.mu0[0]
        } else {
            self.mu0[i]
        }
    }

    /// `E[x0 | x_t]`.
    pub fn posterior_mean(&self, x_t: &[f64], t: usize) -> Vec<f64> {
        let ab = self.schedule.alpha_bar(t);
        let s2 = self.sigma0 * self.sigma0;
        let denom = ab * s2 + 1.0 - ab;
        x_t.iter()
            .enumerate()
            .map(|(i, &x)| (s2 * ab.sqrt() * x + (1.0 - ab) * self.mu_at(i)) / denom)
            .collect()
    }
}

impl Denoiser for AnalyticGaussianDenoiser {
    fn predict_noise(&self, x_t: &[f64], t: usize) -> Vec<f64> {
        assert!(
            self.mu0.len() == 1 || self.mu0.len() == x_t.len(),
            "mu0 length {} does not match input length {}",
            self.mu0.len(),
            x_t.len()
        );
        let ab = self.schedule.alpha_bar(t);
        let x0_hat = self.posterior_mean(x_t, t);
        let s = ab.sqrt();
        let n = (1.0 - ab).sqrt();
        x_t.iter()
            .zip(&x0_hat)
            .map(|(&x, &x0)| (x - s * x0) / n)
            .collect()
    }
}
