//! Adam with decoupled weight decay, plus a step-decay learning-rate schedule.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

/// First/second-moment state for one flat parameter vector per slot.
#[derive(Debug, Clone)]
pub struct AdamW {
    pub config: AdamWConfig,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamW {
    pub fn new(config: AdamWConfig, sizes: &[usize]) -> Self {
        AdamW {
            config,
            step: 0,
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Advances the step counter; call once per update, before [`AdamW::update`].
    pub fn begin_step(&mut self) {
        self.step += 1;
    }

    /// Updates parameter slot `slot` in place at learning rate `lr`.
    pub fn update(&mut self, slot: usize, params: &mut [f64], grads: &[f64], lr: f64) {
        let c = self.config;
        let t = self.step.max(1) as i32;
        let bc1 = 1.0 - c.beta1.powi(t);
        let bc2 = 1.0 - c.beta2.powi(t);
        let (m, v) = (&mut self.m[slot], &mut self.v[slot]);
        for i in 0..params.len() {
            let g = grads[i];
            m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g;
            v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g * g;
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            params[i] *= 1.0 - lr * c.weight_decay;
            params[i] -= lr * m_hat / (v_hat.sqrt() + c.eps);
        }
    }
}

/// Learning rate multiplied by `gamma` every `step_size` epochs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepLr {
    pub base_lr: f64,
    pub step_size: usize,
    pub gamma: f64,
}

impl StepLr {
    pub fn lr_at(&self, epoch: usize) -> f64 {
        let decays = if self.step_size == 0 { 0 } else { epoch / self.step_size };
        self.base_lr * self.gamma.powi(decays as i32)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_lr() {
        let mut opt = AdamW::new(AdamWConfig::default(), &[2]);
        let mut p = vec![1.0, -1.0];
        opt.begin_step();
        opt.update(0, &mut p, &[0.5, -2.0], 0.1);
        assert!((p[0] - 0.9).abs() < 1e-6);
        assert!((p[1] + 0.9).abs() < 1e-6);
    }

    #[test]
    fn decoupled_decay_shrinks_without_gradient() {
        let cfg = AdamWConfig {
            weight_decay: 0.5,
            ..Default::default()
        };
        let mut opt = AdamW::new(cfg, &[1]);
        let mut p = vec![2.0];
        opt.begin_step();
        opt.update(0, &mut p, &[0.0], 0.1);
        assert!((p[0] - 1.9).abs() < 1e-12);
    }

    #[test]
    fn step_schedule() {
        let s = StepLr { base_lr: 1e-3, step_size: 5, gamma: 0.1 };
        assert_eq!(s.lr_at(0), 1e-3);
        assert_eq!(s.lr_at(4), 1e-3);
        assert!((s.lr_at(5) - 1e-4).abs() < 1e-18);
        assert!((s.lr_at(12) - 1e-5).abs() < 1e-18);
    }
}
