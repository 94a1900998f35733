//! Small fully-connected noise predictor for toy-scale training.
//!
//! Input is the flattened noisy sample concatenated with a sinusoidal
//! embedding of `t / T`; hidden layers use SiLU; the output layer is linear.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Denoiser, DiffusionError};
use crate::checkpoint::{Checkpoint, CheckpointError};
use crate::linalg::gemm;
use crate::rng::seeded;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DenoiserArch {
    /// Flattened sample length (e.g. 32·32 for a 32x32 gray patch).
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub hidden_layers: usize,
    /// Number of sin/cos pairs in the time embedding.
    pub time_frequencies: usize,
    /// `T` of the schedule the net is trained for.
    pub steps: usize,
}

impl DenoiserArch {
    pub fn toy(input_dim: usize, steps: usize) -> Self {
        DenoiserArch {
            input_dim,
            hidden_dim: 128,
            hidden_layers: 2,
            time_frequencies: 4,
            steps,
        }
    }

    fn embed_dim(&self) -> usize {
        1 + 2 * self.time_frequencies
    }

    fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::new();
        let mut fan_in = self.input_dim + self.embed_dim();
        for _ in 0..self.hidden_layers {
            dims.push((fan_in, self.hidden_dim));
            fan_in = self.hidden_dim;
        }
        dims.push((fan_in, self.input_dim));
        dims
    }

    pub fn parameter_count(&self) -> usize {
        self.layer_dims().iter().map(|(i, o)| i * o + o).sum()
    }

    pub fn validate(&self) -> Result<(), DiffusionError> {
        if self.input_dim == 0 || self.hidden_dim == 0 || self.steps == 0 {
            return Err(DiffusionError::InvalidArch(format!("{self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Dense {
    fan_in: usize,
    fan_out: usize,
    /// `fan_out x fan_in`, row-major.
    weight: Vec<f64>,
    bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct StoredConfig {
    kind: String,
    arch: DenoiserArch,
}

const KIND: &str = "mlp-denoiser";

#[derive(Debug, Clone, PartialEq)]
pub struct MlpDenoiser {
    arch: DenoiserArch,
    layers: Vec<Dense>,
}

/// Activations kept from a batched forward pass.
pub(crate) struct ForwardCache {
    batch: usize,
    /// Input to each layer (post-activation of the previous one).
    inputs: Vec<Vec<f64>>,
    /// Pre-activation of each hidden layer.
    pre: Vec<Vec<f64>>,
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[inline]
fn silu(x: f64) -> f64 {
    x * sigmoid(x)
}

#[inline]
fn silu_grad(x: f64) -> f64 {
    let s = sigmoid(x);
    s * (1.0 + x * (1.0 - s))
}

impl MlpDenoiser {
    /// Kaiming-uniform weights, zero biases; the output layer starts at a
    /// tenth of that scale.
    pub fn new(arch: DenoiserArch, seed: u64) -> Result<Self, DiffusionError> {
        arch.validate()?;
        let mut rng = seeded(seed);
        let dims = arch.layer_dims();
        let last = dims.len() - 1;
        let layers = dims
            .into_iter()
            .enumerate()
            .map(|(i, (fan_in, fan_out))| {
                let mut bound = (6.0 / fan_in as f64).sqrt();
                if i == last {
                    bound *= 0.1;
                }
                Dense {
                    fan_in,
                    fan_out,
                    weight: (0..fan_in * fan_out)
                        .map(|_| rng.gen_range(-bound..bound))
                        .collect(),
                    bias: vec![0.0; fan_out],
                }
            })
            .collect();
        Ok(MlpDenoiser { arch, layers })
    }

    pub fn arch(&self) -> &DenoiserArch {
        &self.arch
    }

    pub fn parameter_count(&self) -> usize {
        self.arch.parameter_count()
    }

    /// Flat weights in declaration order: per layer, weight then bias.
    pub fn parameters(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weight.iter().chain(&l.bias).copied())
            .collect()
    }

    pub(crate) fn param_slices_mut(&mut self) -> Vec<&mut Vec<f64>> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.weight, &mut l.bias])
            .collect()
    }

    pub(crate) fn param_sizes(&self) -> Vec<usize> {
        self.layers
            .iter()
            .flat_map(|l| [l.weight.len(), l.bias.len()])
            .collect()
    }

    fn embed(&self, t: usize, out: &mut [f64]) {
        let s = t as f64 / self.arch.steps as f64;
        out[0] = s;
        for k in 0..self.arch.time_frequencies {
            let w = std::f64::consts::PI * (1 << k) as f64 * s;
            out[1 + 2 * k] = w.sin();
            out[2 + 2 * k] = w.cos();
        }
    }

    /// Batched forward; `xs` is `batch x input_dim`, row-major.
    pub(crate) fn forward_batch(&self, xs: &[f64], ts: &[usize]) -> (Vec<f64>, ForwardCache) {
        let batch = ts.len();
        let d = self.arch.input_dim;
        let e = self.arch.embed_dim();
        let mut input = vec![0.0; batch * (d + e)];
        for b in 0..batch {
            let row = &mut input[b * (d + e)..(b + 1) * (d + e)];
            row[..d].copy_from_slice(&xs[b * d..(b + 1) * d]);
            self.embed(ts[b], &mut row[d..]);
        }
        let mut inputs = vec![input];
        let mut pre = Vec::new();
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let x = inputs.last().expect("layer input");
            let mut z = vec![0.0; batch * layer.fan_out];
            for b in 0..batch {
                z[b * layer.fan_out..(b + 1) * layer.fan_out].copy_from_slice(&layer.bias);
            }
            gemm(batch, layer.fan_in, layer.fan_out, 1.0, x, false, &layer.weight, true, 1.0, &mut z);
            if i == last {
                return (z, ForwardCache { batch, inputs, pre });
            }
            let a = z.iter().map(|&v| silu(v)).collect();
            pre.push(z);
            inputs.push(a);
        }
        unreachable!("network has an output layer")
    }

    /// Gradients (declaration order) given `d loss / d output`.
    pub(crate) fn backward_batch(&self, cache: &ForwardCache, grad_out: &[f64]) -> Vec<Vec<f64>> {
        let batch = cache.batch;
        let mut grads: Vec<Vec<f64>> = Vec::with_capacity(2 * self.layers.len());
        let mut delta = grad_out.to_vec();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let x = &cache.inputs[i];
            let mut gw = vec![0.0; layer.weight.len()];
            gemm(layer.fan_out, batch, layer.fan_in, 1.0, &delta, true, x, false, 0.0, &mut gw);
            let mut gb = vec![0.0; layer.fan_out];
            for b in 0..batch {
                for (g, d) in gb.iter_mut().zip(&delta[b * layer.fan_out..(b + 1) * layer.fan_out]) {
                    *g += d;
                }
            }
            grads.push(gb);
            grads.push(gw);
            if i > 0 {
                let mut dx = vec![0.0; batch * layer.fan_in];
                gemm(batch, layer.fan_out, layer.fan_in, 1.0, &delta, false, &layer.weight, false, 0.0, &mut dx);
                for (g, &z) in dx.iter_mut().zip(&cache.pre[i - 1]) {
                    *g *= silu_grad(z);
                }
                delta = dx;
            }
        }
        grads.reverse();
        grads
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint::new(
            &StoredConfig {
                kind: KIND.into(),
                arch: self.arch,
            },
            self.parameters(),
        )
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self, CheckpointError> {
        let cfg: StoredConfig = ck.config_as()?;
        if cfg.kind != KIND {
            return Err(CheckpointError::Truncated(format!(
                "checkpoint holds a '{}', not a '{KIND}'",
                cfg.kind
            )));
        }
        let mut net = MlpDenoiser::new(cfg.arch, 0)
            .map_err(|e| CheckpointError::Truncated(e.to_string()))?;
        let expected = net.parameter_count();
        if ck.weights.len() != expected {
            return Err(CheckpointError::WeightCount {
                expected,
                found: ck.weights.len(),
            });
        }
        let mut it = ck.weights.iter();
        for slot in net.param_slices_mut() {
            for v in slot.iter_mut() {
                *v = *it.next().expect("length checked") as f64;
            }
        }
        Ok(net)
    }
}

impl Denoiser for MlpDenoiser {
    fn predict_noise(&self, x_t: &[f64], t: usize) -> Vec<f64> {
        assert_eq!(x_t.len(), self.arch.input_dim, "input length");
        self.forward_batch(x_t, &[t]).0
    }
}
