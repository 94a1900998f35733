//! Layers with explicit forward caches and hand-derived backward passes.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::tensor::{col2im, conv_out, im2col, Tensor};
use crate::linalg::gemm;
use crate::rng::Rng as SeededRng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerKind {
    Conv2d,
    BatchNorm,
    LeakyRelu,
    ConvTranspose2d,
    Sigmoid,
}

/// Static description of one layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl LayerSpec {
    pub fn conv(in_channels: usize, out_channels: usize, kernel: usize, stride: usize, padding: usize) -> Self {
        LayerSpec {
            kind: LayerKind::Conv2d,
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
        }
    }

    pub fn conv_transpose(in_channels: usize, out_channels: usize) -> Self {
        LayerSpec {
            kind: LayerKind::ConvTranspose2d,
            in_channels,
            out_channels,
            kernel: 4,
            stride: 2,
            padding: 1,
        }
    }

    pub fn elementwise(kind: LayerKind, channels: usize) -> Self {
        LayerSpec {
            kind,
            in_channels: channels,
            out_channels: channels,
            kernel: 1,
            stride: 1,
            padding: 0,
        }
    }

    pub fn is_valid(&self) -> bool {
        self.in_channels > 0
            && self.out_channels > 0
            && matches!(self.kernel, 1 | 3 | 4)
            && matches!(self.stride, 1 | 2)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics; running averages are updated.
    Train,
    /// Running statistics.
    Eval,
}

/// Trainable array and its accumulated gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub value: Vec<f64>,
    pub grad: Vec<f64>,
}

impl Param {
    fn new(value: Vec<f64>) -> Self {
        let grad = vec![0.0; value.len()];
        Param { value, grad }
    }

    fn kaiming_uniform(len: usize, fan_in: usize, rng: &mut SeededRng) -> Self {
        // Uniform(±1/sqrt(fan_in)): Kaiming-uniform with negative slope sqrt(5).
        let bound = 1.0 / (fan_in as f64).sqrt();
        Param::new((0..len).map(|_| rng.gen_range(-bound..bound)).collect())
    }
}

#[derive(Debug, Clone)]
pub struct Conv2d {
    pub spec: LayerSpec,
    /// `out x (in·k·k)`.
    pub weight: Param,
    pub bias: Param,
    cols: Vec<Vec<f64>>,
    in_shape: (usize, usize, usize, usize),
}

impl Conv2d {
    pub fn new(spec: LayerSpec, rng: &mut SeededRng) -> Self {
        let fan_in = spec.in_channels * spec.kernel * spec.kernel;
        Conv2d {
            spec,
            weight: Param::kaiming_uniform(spec.out_channels * fan_in, fan_in, rng),
            bias: Param::new(vec![0.0; spec.out_channels]),
            cols: Vec::new(),
            in_shape: (0, 0, 0, 0),
        }
    }

    fn out_hw(&self, h: usize, w: usize) -> (usize, usize) {
        let s = &self.spec;
        (conv_out(h, s.kernel, s.stride, s.padding), conv_out(w, s.kernel, s.stride, s.padding))
    }

    fn run(&self, x: &Tensor, mut keep: Option<&mut Vec<Vec<f64>>>) -> Tensor {
        let s = self.spec;
        assert_eq!(x.c, s.in_channels, "conv input channels");
        let (oh, ow) = self.out_hw(x.h, x.w);
        let p = oh * ow;
        let kdim = s.in_channels * s.kernel * s.kernel;
        let mut out = Tensor::zeros(x.n, s.out_channels, oh, ow);
        for i in 0..x.n {
            let mut cols = vec![0.0; kdim * p];
            im2col(x.sample(i), x.c, x.h, x.w, s.kernel, s.stride, s.padding, &mut cols);
            let o = out.sample_mut(i);
            for (co, b) in self.bias.value.iter().enumerate() {
                o[co * p..(co + 1) * p].fill(*b);
            }
            gemm(s.out_channels, kdim, p, 1.0, &self.weight.value, false, &cols, false, 1.0, o);
            if let Some(store) = keep.as_deref_mut() {
                store.push(cols);
            }
        }
        out
    }

    pub fn forward(&mut self, x: &Tensor) -> Tensor {
        let mut cols = Vec::with_capacity(x.n);
        let out = self.run(x, Some(&mut cols));
        self.cols = cols;
        self.in_shape = x.shape();
        out
    }

    pub fn infer(&self, x: &Tensor) -> Tensor {
        self.run(x, None)
    }

    pub fn backward(&mut self, grad: &Tensor) -> Tensor {
        let s = self.spec;
        let (n, c, h, w) = self.in_shape;
        let p = grad.plane();
        let kdim = c * s.kernel * s.kernel;
        let mut dx = Tensor::zeros(n, c, h, w);
        let mut dcols = vec![0.0; kdim * p];
        for i in 0..n {
            let g = grad.sample(i);
            gemm(s.out_channels, p, kdim, 1.0, g, false, &self.cols[i], true, 1.0, &mut self.weight.grad);
            for (co, db) in self.bias.grad.iter_mut().enumerate() {
                *db += g[co * p..(co + 1) * p].iter().sum::<f64>();
            }
            gemm(kdim, s.out_channels, p, 1.0, &self.weight.value, true, g, false, 0.0, &mut dcols);
            col2im(&dcols, c, h, w, s.kernel, s.stride, s.padding, dx.sample_mut(i));
        }
        dx
    }
}

/// Up-sampling convolution; weights laid out `in x (out·k·k)`.
#[derive(Debug, Clone)]
pub struct ConvTranspose2d {
    pub spec: LayerSpec,
    pub weight: Param,
    pub bias: Param,
    input: Option<Tensor>,
}

impl ConvTranspose2d {
    pub fn new(spec: LayerSpec, rng: &mut SeededRng) -> Self {
        let fan_in = spec.out_channels * spec.kernel * spec.kernel;
        ConvTranspose2d {
            spec,
            weight: Param::kaiming_uniform(spec.in_channels * fan_in, fan_in, rng),
            bias: Param::new(vec![0.0; spec.out_channels]),
            input: None,
        }
    }

    fn out_hw(&self, h: usize, w: usize) -> (usize, usize) {
        let s = &self.spec;
        (
            (h - 1) * s.stride + s.kernel - 2 * s.padding,
            (w - 1) * s.stride + s.kernel - 2 * s.padding,
        )
    }

    pub fn infer(&self, x: &Tensor) -> Tensor {
        let s = self.spec;
        assert_eq!(x.c, s.in_channels, "transposed conv input channels");
        let (oh, ow) = self.out_hw(x.h, x.w);
        let p = x.plane();
        let kdim = s.out_channels * s.kernel * s.kernel;
        let mut out = Tensor::zeros(x.n, s.out_channels, oh, ow);
        let mut cols = vec![0.0; kdim * p];
        for i in 0..x.n {
            gemm(kdim, s.in_channels, p, 1.0, &self.weight.value, true, x.sample(i), false, 0.0, &mut cols);
            let o = out.sample_mut(i);
            col2im(&cols, s.out_channels, oh, ow, s.kernel, s.stride, s.padding, o);
            let op = oh * ow;
            for (co, b) in self.bias.value.iter().enumerate() {
                for v in &mut o[co * op..(co + 1) * op] {
                    *v += b;
                }
            }
        }
        out
    }

    pub fn forward(&mut self, x: &Tensor) -> Tensor {
        self.input = Some(x.clone());
        self.infer(x)
    }

    pub fn backward(&mut self, grad: &Tensor) -> Tensor {
        let s = self.spec;
        let x = self.input.as_ref().expect("forward before backward");
        let p = x.plane();
        let kdim = s.out_channels * s.kernel * s.kernel;
        let mut dx = Tensor::zeros(x.n, x.c, x.h, x.w);
        let mut gcols = vec![0.0; kdim * p];
        let op = grad.plane();
        for i in 0..x.n {
            let g = grad.sample(i);
            im2col(g, grad.c, grad.h, grad.w, s.kernel, s.stride, s.padding, &mut gcols);
            gemm(s.in_channels, kdim, p, 1.0, &self.weight.value, false, &gcols, false, 0.0, dx.sample_mut(i));
            gemm(s.in_channels, p, kdim, 1.0, x.sample(i), false, &gcols, true, 1.0, &mut self.weight.grad);
            for (co, db) in self.bias.grad.iter_mut().enumerate() {
                *db += g[co * op..(co + 1) * op].iter().sum::<f64>();
            }
        }
        dx
    }
}

pub const BN_MOMENTUM: f64 = 0.1;
pub const BN_EPS: f64 = 1e-5;

#[derive(Debug, Clone)]
pub struct BatchNorm2d {
    pub channels: usize,
    pub gamma: Param,
    pub beta: Param,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    x_hat: Vec<f64>,
    inv_std: Vec<f64>,
    shape: (usize, usize, usize, usize),
    cached_mode: Option<Mode>,
}

impl BatchNorm2d {
    pub fn new(channels: usize) -> Self {
        BatchNorm2d {
            channels,
            gamma: Param::new(vec![1.0; channels]),
            beta: Param::new(vec![0.0; channels]),
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
            x_hat: Vec::new(),
            inv_std: Vec::new(),
            shape: (0, 0, 0, 0),
            cached_mode: None,
        }
    }

    fn channel_iter(x: &Tensor, c: usize) -> impl Iterator<Item = usize> + '_ {
        let p = x.plane();
        (0..x.n).flat_map(move |i| {
            let base = (i * x.c + c) * p;
            base..base + p
        })
    }

    fn normalize(&self, x: &Tensor, mean: &[f64], inv_std: &[f64], x_hat: Option<&mut Vec<f64>>) -> Tensor {
        let mut out = x.clone();
        let mut hat = vec![0.0; if x_hat.is_some() { x.data.len() } else { 0 }];
        for c in 0..self.channels {
            for idx in Self::channel_iter(x, c) {
                let h = (x.data[idx] - mean[c]) * inv_std[c];
                if !hat.is_empty() {
                    hat[idx] = h;
                }
                out.data[idx] = self.gamma.value[c] * h + self.beta.value[c];
            }
        }
        if let Some(store) = x_hat {
            *store = hat;
        }
        out
    }

    pub fn infer(&self, x: &Tensor) -> Tensor {
        let inv: Vec<f64> = self.running_var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
        self.normalize(x, &self.running_mean, &inv, None)
    }

    pub fn forward(&mut self, x: &Tensor, mode: Mode) -> Tensor {
        assert_eq!(x.c, self.channels, "batch norm channels");
        self.shape = x.shape();
        self.cached_mode = Some(mode);
        let (mean, inv) = match mode {
            Mode::Eval => (
                self.running_mean.clone(),
                self.running_var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect::<Vec<_>>(),
            ),
            Mode::Train => {
                let m = (x.n * x.plane()) as f64;
                let mut mean = vec![0.0; self.channels];
                let mut var = vec![0.0; self.channels];
                for c in 0..self.channels {
                    mean[c] = Self::channel_iter(x, c).map(|i| x.data[i]).sum::<f64>() / m;
                    var[c] = Self::channel_iter(x, c)
                        .map(|i| (x.data[i] - mean[c]).powi(2))
                        .sum::<f64>()
                        / m;
                    let unbiased = if m > 1.0 { var[c] * m / (m - 1.0) } else { var[c] };
                    self.running_mean[c] = (1.0 - BN_MOMENTUM) * self.running_mean[c] + BN_MOMENTUM * mean[c];
                    self.running_var[c] = (1.0 - BN_MOMENTUM) * self.running_var[c] + BN_MOMENTUM * unbiased;
                }
                (mean, var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect())
            }
        };
        let mut hat = Vec::new();
        let out = self.normalize(x, &mean, &inv, Some(&mut hat));
        self.x_hat = hat;
        self.inv_std = inv;
        out
    }

    pub fn backward(&mut self, grad: &Tensor) -> Tensor {
        let mode = self.cached_mode.expect("forward before backward");
        let (n, c_all, h, w) = self.shape;
        let m = (n * h * w) as f64;
        let mut dx = Tensor::zeros(n, c_all, h, w);
        for c in 0..self.channels {
            let (mut sum_g, mut sum_gh) = (0.0, 0.0);
            for idx in Self::channel_iter(grad, c) {
                sum_g += grad.data[idx];
                sum_gh += grad.data[idx] * self.x_hat[idx];
            }
            self.gamma.grad[c] += sum_gh;
            self.beta.grad[c] += sum_g;
            let scale = self.gamma.value[c] * self.inv_std[c];
            for idx in Self::channel_iter(grad, c) {
                dx.data[idx] = match mode {
                    Mode::Eval => scale * grad.data[idx],
                    Mode::Train => {
                        scale * (grad.data[idx] - sum_g / m - self.x_hat[idx] * sum_gh / m)
                    }
                };
            }
        }
        dx
    }
}

#[derive(Debug, Clone)]
pub struct LeakyRelu {
    pub slope: f64,
    input: Vec<f64>,
    /// Fixed negative-side pattern; when set, the layer acts as the linear
    /// piece it selects instead of testing signs.
    pinned: Option<Vec<bool>>,
}

impl LeakyRelu {
    pub fn new(slope: f64) -> Self {
        LeakyRelu {
            slope,
            input: Vec::new(),
            pinned: None,
        }
    }

    fn negative(&self, i: usize, x: f64) -> bool {
        match &self.pinned {
            Some(p) => p[i],
            None => x < 0.0,
        }
    }

    pub fn infer(&self, x: &Tensor) -> Tensor {
        let mut out = x.clone();
        for (i, v) in out.data.iter_mut().enumerate() {
            if self.negative(i, *v) {
                *v *= self.slope;
            }
        }
        out
    }

    pub fn forward(&mut self, x: &Tensor) -> Tensor {
        self.input = x.data.clone();
        self.infer(x)
    }

    /// Which cached inputs were negative in the last forward pass.
    pub fn negative_pattern(&self) -> Vec<bool> {
        self.input.iter().enumerate().map(|(i, &x)| self.negative(i, x)).collect()
    }

    /// Pins the pattern of the last forward pass, or releases it.
    pub fn pin(&mut self, on: bool) {
        self.pinned = on.then(|| self.negative_pattern());
    }

    pub fn backward(&mut self, grad: &Tensor) -> Tensor {
        let mut dx = grad.clone();
        for (i, (d, &x)) in dx.data.iter_mut().zip(&self.input).enumerate() {
            if self.negative(i, x) {
                *d *= self.slope;
            }
        }
        dx
    }
}

/// Any non-terminal layer of the detector.
#[derive(Debug, Clone)]
pub enum Layer {
    Conv(Conv2d),
    ConvT(ConvTranspose2d),
    Norm(BatchNorm2d),
    Act(LeakyRelu),
}

impl Layer {
    pub fn spec(&self) -> LayerSpec {
        match self {
            Layer::Conv(l) => l.spec,
            Layer::ConvT(l) => l.spec,
            Layer::Norm(l) => LayerSpec::elementwise(LayerKind::BatchNorm, l.channels),
            Layer::Act(_) => LayerSpec::elementwise(LayerKind::LeakyRelu, 0),
        }
    }

    pub fn forward(&mut self, x: &Tensor, mode: Mode) -> Tensor {
        match self {
            Layer::Conv(l) => l.forward(x),
            Layer::ConvT(l) => l.forward(x),
            Layer::Norm(l) => l.forward(x, mode),
            Layer::Act(l) => l.forward(x),
        }
    }

    pub fn infer(&self, x: &Tensor) -> Tensor {
        match self {
            Layer::Conv(l) => l.infer(x),
            Layer::ConvT(l) => l.infer(x),
            Layer::Norm(l) => l.infer(x),
            Layer::Act(l) => l.infer(x),
        }
    }

    pub fn backward(&mut self, grad: &Tensor) -> Tensor {
        match self {
            Layer::Conv(l) => l.backward(grad),
            Layer::ConvT(l) => l.backward(grad),
            Layer::Norm(l) => l.backward(grad),
            Layer::Act(l) => l.backward(grad),
        }
    }

    /// Trainable arrays in declaration order.
    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        match self {
            Layer::Conv(l) => vec![&mut l.weight, &mut l.bias],
            Layer::ConvT(l) => vec![&mut l.weight, &mut l.bias],
            Layer::Norm(l) => vec![&mut l.gamma, &mut l.beta],
            Layer::Act(_) => Vec::new(),
        }
    }

    pub fn params(&self) -> Vec<&Param> {
        match self {
            Layer::Conv(l) => vec![&l.weight, &l.bias],
            Layer::ConvT(l) => vec![&l.weight, &l.bias],
            Layer::Norm(l) => vec![&l.gamma, &l.beta],
            Layer::Act(_) => Vec::new(),
        }
    }

    /// Everything persisted in a checkpoint, in order: parameters then
    /// (for batch norm) running mean and variance.
    pub fn state_mut(&mut self) -> Vec<&mut Vec<f64>> {
        match self {
            Layer::Conv(l) => vec![&mut l.weight.value, &mut l.bias.value],
            Layer::ConvT(l) => vec![&mut l.weight.value, &mut l.bias.value],
            Layer::Norm(l) => vec![
                &mut l.gamma.value,
                &mut l.beta.value,
                &mut l.running_mean,
                &mut l.running_var,
            ],
            Layer::Act(_) => Vec::new(),
        }
    }

    pub fn state(&self) -> Vec<&Vec<f64>> {
        match self {
            Layer::Conv(l) => vec![&l.weight.value, &l.bias.value],
            Layer::ConvT(l) => vec![&l.weight.value, &l.bias.value],
            Layer::Norm(l) => vec![&l.gamma.value, &l.beta.value, &l.running_mean, &l.running_var],
            Layer::Act(_) => Vec::new(),
        }
    }
}
