//! Raindrop detector: strided conv head, bottleneck residual body,
//! transposed-conv tail, per-pixel sigmoid.

use serde::{Deserialize, Serialize};

use super::layers::{
    BatchNorm2d, Conv2d, ConvTranspose2d, Layer, LayerKind, LayerSpec, LeakyRelu, Mode, Param,
};
use super::tensor::Tensor;
use super::DetectorError;
use crate::checkpoint::{Checkpoint, CheckpointError};
use crate::image::{GrayImage, Image};
use crate::rng::seeded;

pub const NEGATIVE_SLOPE: f64 = 0.01;
/// Total down-sampling factor of the head.
pub const STRIDE_MULTIPLE: usize = 8;

const KIND: &str = "raindrop-detector";

/// Channel widths of the network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorConfig {
    pub in_channels: usize,
    /// Output channels of the two 3x3 stride-2 head blocks.
    pub head_channels: [usize; 2],
    /// Width of the residual body.
    pub width: usize,
    pub bottleneck: usize,
    pub residual_blocks: usize,
    pub tail_channels: usize,
    /// Output channels of the three up-sampling blocks.
    pub up_channels: [usize; 3],
    pub negative_slope: f64,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        DetectorConfig {
            in_channels: 3,
            head_channels: [32, 64],
            width: 256,
            bottleneck: 64,
            residual_blocks: 6,
            tail_channels: 64,
            up_channels: [64, 32, 32],
            negative_slope: NEGATIVE_SLOPE,
        }
    }
}

impl DetectorConfig {
    /// Same topology with two residual blocks and single-digit widths.
    pub fn miniature() -> Self {
        DetectorConfig {
            in_channels: 3,
            head_channels: [4, 6],
            width: 8,
            bottleneck: 4,
            residual_blocks: 2,
            tail_channels: 6,
            up_channels: [6, 4, 4],
            negative_slope: NEGATIVE_SLOPE,
        }
    }

    pub fn validate(&self) -> Result<(), DetectorError> {
        let widths = [
            self.in_channels,
            self.head_channels[0],
            self.head_channels[1],
            self.width,
            self.bottleneck,
            self.tail_channels,
            self.up_channels[0],
            self.up_channels[1],
            self.up_channels[2],
        ];
        if widths.contains(&0) {
            return Err(DetectorError::InvalidConfig(format!("zero channel width in {self:?}")));
        }
        if !(self.negative_slope >= 0.0 && self.negative_slope < 1.0) {
            return Err(DetectorError::InvalidConfig(format!(
                "negative slope {} outside [0, 1)",
                self.negative_slope
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct ResidualBlock {
    pub layers: Vec<Layer>,
}

#[derive(Debug, Clone)]
pub struct DetectorNet {
    pub config: DetectorConfig,
    pub head: Vec<Layer>,
    pub body: Vec<ResidualBlock>,
    pub tail: Vec<Layer>,
    skip: bool,
    output: Option<Tensor>,
}

fn conv_block(layers: &mut Vec<Layer>, spec: LayerSpec, slope: f64, rng: &mut crate::rng::Rng) {
    let out = spec.out_channels;
    match spec.kind {
        LayerKind::ConvTranspose2d => layers.push(Layer::ConvT(ConvTranspose2d::new(spec, rng))),
        _ => layers.push(Layer::Conv(Conv2d::new(spec, rng))),
    }
    layers.push(Layer::Norm(BatchNorm2d::new(out)));
    layers.push(Layer::Act(LeakyRelu::new(slope)));
}

/// Builds a detector with the default channel widths.
pub fn build_detector(seed: u64) -> DetectorNet {
    DetectorNet::new(DetectorConfig::default(), seed).expect("default config is valid")
}

impl DetectorNet {
    pub fn new(config: DetectorConfig, seed: u64) -> Result<Self, DetectorError> {
        config.validate()?;
        let mut rng = seeded(seed);
        let s = config.negative_slope;
        let [h0, h1] = config.head_channels;

        let mut head = Vec::new();
        conv_block(&mut head, LayerSpec::conv(config.in_channels, h0, 3, 2, 1), s, &mut rng);
        conv_block(&mut head, LayerSpec::conv(h0, h1, 3, 2, 1), s, &mut rng);
        head.push(Layer::Conv(Conv2d::new(LayerSpec::conv(h1, config.width, 1, 2, 0), &mut rng)));

        let body = (0..config.residual_blocks)
            .map(|_| {
                let mut layers = Vec::new();
                let (w, b) = (config.width, config.bottleneck);
                conv_block(&mut layers, LayerSpec::conv(w, b, 1, 1, 0), s, &mut rng);
                conv_block(&mut layers, LayerSpec::conv(b, b, 3, 1, 1), s, &mut rng);
                conv_block(&mut layers, LayerSpec::conv(b, w, 1, 1, 0), s, &mut rng);
                ResidualBlock { layers }
            })
            .collect();

        let mut tail = Vec::new();
        conv_block(&mut tail, LayerSpec::conv(config.width, config.tail_channels, 3, 1, 1), s, &mut rng);
        let mut c = config.tail_channels;
        for &u in &config.up_channels {
            conv_block(&mut tail, LayerSpec::conv_transpose(c, u), s, &mut rng);
            c = u;
        }
        tail.push(Layer::Conv(Conv2d::new(LayerSpec::conv(c, 1, 3, 1, 1), &mut rng)));

        Ok(DetectorNet {
            config,
            head,
            body,
            tail,
            skip: true,
            output: None,
        })
    }

    /// Enables or disables the identity path of every residual block.
    pub fn set_skip(&mut self, enabled: bool) {
        self.skip = enabled;
    }

    fn layers(&self) -> impl Iterator<Item = &Layer> {
        self.head
            .iter()
            .chain(self.body.iter().flat_map(|b| b.layers.iter()))
            .chain(self.tail.iter())
    }

    fn layers_mut(&mut self) -> impl Iterator<Item = &mut Layer> {
        self.head
            .iter_mut()
            .chain(self.body.iter_mut().flat_map(|b| b.layers.iter_mut()))
            .chain(self.tail.iter_mut())
    }

    /// Every layer in execution order, ending with the sigmoid.
    pub fn layer_specs(&self) -> Vec<LayerSpec> {
        let mut channels = self.config.in_channels;
        let mut specs: Vec<LayerSpec> = self
            .layers()
            .map(|l| {
                let spec = match l {
                    Layer::Act(_) => LayerSpec::elementwise(LayerKind::LeakyRelu, channels),
                    other => other.spec(),
                };
                channels = spec.out_channels;
                spec
            })
            .collect();
        specs.push(LayerSpec::elementwise(LayerKind::Sigmoid, 1));
        specs
    }

    pub fn parameter_count(&self) -> usize {
        self.param_sizes().iter().sum()
    }

    pub fn param_sizes(&self) -> Vec<usize> {
        self.layers().flat_map(|l| l.params()).map(|p| p.value.len()).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        self.layers_mut().flat_map(|l| l.params_mut()).collect()
    }

    /// Flat parameter values in declaration order.
    pub fn parameters(&self) -> Vec<f64> {
        self.layers()
            .flat_map(|l| l.params())
            .flat_map(|p| p.value.iter().copied())
            .collect()
    }

    /// Flat accumulated gradients, aligned with [`DetectorNet::parameters`].
    pub fn gradients(&self) -> Vec<f64> {
        self.layers()
            .flat_map(|l| l.params())
            .flat_map(|p| p.grad.iter().copied())
            .collect()
    }

    pub fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.grad.fill(0.0);
        }
    }

    fn check_input(&self, x: &Tensor) -> Result<(), DetectorError> {
        if x.c != self.config.in_channels {
            return Err(DetectorError::ChannelMismatch {
                expected: self.config.in_channels,
                found: x.c,
            });
        }
        if x.n == 0 || x.h == 0 || x.w == 0 || x.h % STRIDE_MULTIPLE != 0 || x.w % STRIDE_MULTIPLE != 0 {
            return Err(DetectorError::IndivisibleSize {
                height: x.h,
                width: x.w,
            });
        }
        Ok(())
    }

    /// Pre-sigmoid logits, caching activations for [`DetectorNet::backward`].
    pub fn forward(&mut self, x: &Tensor, mode: Mode) -> Result<Tensor, DetectorError> {
        self.check_input(x)?;
        let mut h = x.clone();
        for l in &mut self.head {
            h = l.forward(&h, mode);
        }
        let skip = self.skip;
        for block in &mut self.body {
            let mut y = h.clone();
            for l in &mut block.layers {
                y = l.forward(&y, mode);
            }
            if skip {
                y.add_assign(&h);
            }
            h = y;
        }
        for l in &mut self.tail {
            h = l.forward(&h, mode);
        }
        self.output = Some(h.clone());
        Ok(h)
    }

    /// Eval-mode logits without touching caches or running statistics.
    pub fn infer(&self, x: &Tensor) -> Result<Tensor, DetectorError> {
        self.check_input(x)?;
        let mut h = x.clone();
        for l in &self.head {
            h = l.infer(&h);
        }
        for block in &self.body {
            let mut y = h.clone();
            for l in &block.layers {
                y = l.infer(&y);
            }
            if self.skip {
                y.add_assign(&h);
            }
            h = y;
        }
        for l in &self.tail {
            h = l.infer(&h);
        }
        Ok(h)
    }

    /// Back-propagates `d loss / d logits`, accumulating parameter gradients.
    /// Returns the gradient with respect to the input.
    pub fn backward(&mut self, grad_logits: &Tensor) -> Tensor {
        assert_eq!(
            self.output.as_ref().map(Tensor::shape),
            Some(grad_logits.shape()),
            "backward needs a matching forward"
        );
        let mut g = grad_logits.clone();
        for l in self.tail.iter_mut().rev() {
            g = l.backward(&g);
        }
        let skip = self.skip;
        for block in self.body.iter_mut().rev() {
            let mut d = g.clone();
            for l in block.layers.iter_mut().rev() {
                d = l.backward(&d);
            }
            if skip {
                d.add_assign(&g);
            }
            g = d;
        }
        for l in self.head.iter_mut().rev() {
            g = l.backward(&g);
        }
        g
    }

    /// Concatenated sign pattern of every activation input from the last
    /// cached forward pass; two passes with equal patterns lie on the same
    /// linear piece of the network.
    pub fn activation_pattern(&self) -> Vec<bool> {
        self.layers()
            .flat_map(|l| match l {
                Layer::Act(a) => a.negative_pattern(),
                _ => Vec::new(),
            })
            .collect()
    }

    /// Pins every activation to the piece chosen by the last cached forward
    /// pass, making the network smooth around that point; `false` releases.
    pub fn pin_activations(&mut self, on: bool) {
        for l in self.layers_mut() {
            if let Layer::Act(a) = l {
                a.pin(on);
            }
        }
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let weights: Vec<f64> = self
            .layers()
            .flat_map(|l| l.state())
            .flat_map(|v| v.iter().copied())
            .collect();
        Checkpoint::new(
            &StoredConfig {
                kind: KIND.into(),
                config: self.config.clone(),
            },
            weights,
        )
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self, CheckpointError> {
        let stored: StoredConfig = ck.config_as()?;
        if stored.kind != KIND {
            return Err(CheckpointError::Truncated(format!(
                "checkpoint holds a '{}', not a '{KIND}'",
                stored.kind
            )));
        }
        let mut net = DetectorNet::new(stored.config, 0)
            .map_err(|e| CheckpointError::Truncated(e.to_string()))?;
        let expected: usize = net.layers().flat_map(|l| l.state()).map(Vec::len).sum();
        if ck.weights.len() != expected {
            return Err(CheckpointError::WeightCount {
                expected,
                found: ck.weights.len(),
            });
        }
        let mut src = ck.weights.iter();
        for l in net.layers_mut() {
            for v in l.state_mut() {
                for x in v.iter_mut() {
                    *x = *src.next().expect("length checked") as f64;
                }
            }
        }
        Ok(net)
    }
}

#[derive(Serialize, Deserialize)]
struct StoredConfig {
    kind: String,
    config: DetectorConfig,
}

/// Converts an interleaved `H x W x C` image to a `1 x C x H x W` tensor.
pub fn image_to_tensor(img: &Image) -> Tensor {
    let (h, w, c) = (img.height(), img.width(), img.channels());
    let mut t = Tensor::zeros(1, c, h, w);
    for (i, px) in img.data().chunks_exact(c).enumerate() {
        for (ch, &v) in px.iter().enumerate() {
            t.data[ch * h * w + i] = v;
        }
    }
    t
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Eval-mode probability map for one RGB image.
pub fn detector_forward(net: &DetectorNet, img: &Image) -> Result<GrayImage, DetectorError> {
    let logits = net.infer(&image_to_tensor(img))?;
    let data = logits.data.iter().map(|&z| sigmoid(z)).collect();
    Ok(GrayImage::from_vec(img.height(), img.width(), data).expect("sigmoid output in range"))
}
