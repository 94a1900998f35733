use rand::Rng;
use serde::{Deserialize, Serialize};

use super::mlp::{DenoiserArch, MlpDenoiser};
use super::process::{noised, normal_vec};
use super::{DiffusionError, NoiseSchedule};
use crate::optim::{AdamW, AdamWConfig};
use crate::rng::seeded;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DenoiserTrainConfig {
    pub steps: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for DenoiserTrainConfig {
    fn default() -> Self {
        DenoiserTrainConfig {
            steps: 2000,
            learning_rate: 1e-3,
            batch_size: 32,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainedDenoiser {
    pub denoiser: MlpDenoiser,
    /// `(step, batch loss)` for every optimizer step.
    pub loss_curve: Vec<(usize, f64)>,
    /// Loss on a fixed held-back batch before and after training.
    pub initial_eval_loss: f64,
    pub final_eval_loss: f64,
}

impl TrainedDenoiser {
    /// Mean loss of the first and last 10% of steps.
    pub fn window_means(&self) -> (f64, f64) {
        window_means(&self.loss_curve)
    }

    pub fn loss_csv(&self) -> String {
        let mut s = String::from("step,loss\n");
        for (step, loss) in &self.loss_curve {
            s.push_str(&format!("{step},{loss}\n"));
        }
        s
    }
}

pub(crate) fn window_means(curve: &[(usize, f64)]) -> (f64, f64) {
    let n = curve.len();
    let w = (n / 10).max(1).min(n);
    let mean = |xs: &[(usize, f64)]| xs.iter().map(|p| p.1).sum::<f64>() / xs.len() as f64;
    (mean(&curve[..w]), mean(&curve[n - w..]))
}

struct Batch {
    xs: Vec<f64>,
    ts: Vec<usize>,
    eps: Vec<f64>,
}

fn draw_batch<R: Rng>(
    rng: &mut R,
    dataset: &[Vec<f64>],
    sched: &NoiseSchedule,
    batch: usize,
) -> Batch {
    let dim = dataset[0].len();
    let mut xs = Vec::with_capacity(batch * dim);
    let mut ts = Vec::with_capacity(batch);
    let mut all_eps = Vec::with_capacity(batch * dim);
    for _ in 0..batch {
        let x0 = &dataset[rng.gen_range(0..dataset.len())];
        let t = rng.gen_range(1..=sched.steps());
        let eps = normal_vec(rng, dim);
        xs.extend(noised(x0, &eps, sched.alpha_bar(t)));
        ts.push(t);
        all_eps.extend(eps);
    }
    Batch {
        xs,
        ts,
        eps: all_eps,
    }
}

fn batch_loss(net: &MlpDenoiser, b: &Batch) -> (f64, Vec<f64>, super::mlp::ForwardCache) {
    let (out, cache) = net.forward_batch(&b.xs, &b.ts);
    let n = out.len() as f64;
    let mut loss = 0.0;
    let grad = out
        .iter()
        .zip(&b.eps)
        .map(|(o, e)| {
            let d = o - e;
            loss += d * d;
            2.0 * d / n
        })
        .collect();
    (loss / n, grad, cache)
}

/// Fits an [`MlpDenoiser`] with the simplified objective `E‖ε - ε̂(x_t, t)‖²`
/// over random `(x0, t, ε)` draws.
pub fn train_denoiser(
    dataset: &[Vec<f64>],
    arch: DenoiserArch,
    cfg: DenoiserTrainConfig,
    sched: &NoiseSchedule,
) -> Result<TrainedDenoiser, DiffusionError> {
    let dim = dataset.first().ok_or(DiffusionError::EmptyDataset)?.len();
    if dataset.iter().any(|x| x.len() != dim) {
        return Err(DiffusionError::ShapeMismatch(
            "dataset tensors differ in length".into(),
        ));
    }
    if dim != arch.input_dim {
        return Err(DiffusionError::ShapeMismatch(format!(
            "dataset tensors have {dim} values, architecture expects {}",
            arch.input_dim
        )));
    }
    if arch.steps != sched.steps() {
        return Err(DiffusionError::InvalidArch(format!(
            "architecture built for T={}, schedule has T={}",
            arch.steps,
            sched.steps()
        )));
    }
    if cfg.batch_size == 0 || cfg.steps == 0 || !(cfg.learning_rate > 0.0) {
        return Err(DiffusionError::InvalidArch(format!(
            "invalid training config {cfg:?}"
        )));
    }
    let mut net = MlpDenoiser::new(arch, cfg.seed)?;
    let mut rng = seeded(cfg.seed.wrapping_add(1));
    let mut eval_rng = seeded(cfg.seed.wrapping_add(2));
    let eval = draw_batch(&mut eval_rng, dataset, sched, 256);
    let initial_eval_loss = batch_loss(&net, &eval).0;

    let mut opt = AdamW::new(
        AdamWConfig {
            learning_rate: cfg.learning_rate,
            ..Default::default()
        },
        &net.param_sizes(),
    );
    let mut curve = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let batch = draw_batch(&mut rng, dataset, sched, cfg.batch_size);
        let (loss, grad_out, cache) = batch_loss(&net, &batch);
        if !loss.is_finite() {
            return Err(DiffusionError::Diverged { step, loss });
        }
        curve.push((step, loss));
        let grads = net.backward_batch(&cache, &grad_out);
        opt.begin_step();
        for (slot, (param, grad)) in net.param_slices_mut().into_iter().zip(&grads).enumerate() {
            opt.update(slot, param, grad, cfg.learning_rate);
        }
    }
    let final_eval_loss = batch_loss(&net, &eval).0;
    if !final_eval_loss.is_finite() {
        return Err(DiffusionError::Diverged {
            step: cfg.steps,
            loss: final_eval_loss,
        });
    }
    Ok(TrainedDenoiser {
        denoiser: net,
        loss_curve: curve,
        initial_eval_loss,
        final_eval_loss,
    })
}
