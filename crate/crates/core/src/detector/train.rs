use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::layers::Mode;
use super::loss::{bce_with_logits, Reduction};
use super::net::{image_to_tensor, DetectorConfig, DetectorNet};
use super::tensor::Tensor;
use super::DetectorError;
use crate::image::{Image, Mask};
use crate::optim::{AdamW, AdamWConfig, StepLr};
use crate::rng::seeded;

pub const DEFAULT_EPOCHS: usize = 100;
pub const DEFAULT_BATCH_SIZE: usize = 32;
pub const DEFAULT_LEARNING_RATE: f64 = 1e-3;
pub const DEFAULT_WEIGHT_DECAY: f64 = 1e-4;
pub const DEFAULT_LR_STEP_SIZE: usize = 5;
pub const DEFAULT_LR_GAMMA: f64 = 0.1;
pub const DEFAULT_SEED: u64 = 2023;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub lr_step_size: usize,
    pub lr_gamma: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: DEFAULT_EPOCHS,
            batch_size: DEFAULT_BATCH_SIZE,
            learning_rate: DEFAULT_LEARNING_RATE,
            weight_decay: DEFAULT_WEIGHT_DECAY,
            lr_step_size: DEFAULT_LR_STEP_SIZE,
            lr_gamma: DEFAULT_LR_GAMMA,
            seed: DEFAULT_SEED,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), DetectorError> {
        let ok = self.epochs > 0
            && self.batch_size > 0
            && self.learning_rate > 0.0
            && self.weight_decay >= 0.0
            && self.lr_step_size > 0
            && self.lr_gamma > 0.0;
        if ok {
            Ok(())
        } else {
            Err(DetectorError::InvalidConfig(format!("{self:?}")))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub learning_rate: f64,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainedDetector {
    pub net: DetectorNet,
    pub log: Vec<EpochLog>,
}

impl TrainedDetector {
    /// `epoch,train_loss,val_loss`; the validation column is empty without a
    /// validation set.
    pub fn log_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,val_loss\n");
        for e in &self.log {
            let val = e.val_loss.map(|v| format!("{v:.8}")).unwrap_or_default();
            out.push_str(&format!("{},{:.8},{val}\n", e.epoch, e.train_loss));
        }
        out
    }
}

/// Stacks images into one batch tensor and flattens masks as targets.
pub fn make_batch(pairs: &[&(Image, Mask)]) -> (Tensor, Vec<f64>) {
    let tensors: Vec<Tensor> = pairs.iter().map(|(img, _)| image_to_tensor(img)).collect();
    let targets = pairs
        .iter()
        .flat_map(|(_, m)| m.data().iter().map(|&v| v as f64))
        .collect();
    (Tensor::stack(&tensors), targets)
}

/// One forward/backward pass; returns the loss and leaves gradients
/// accumulated in `net`.
pub fn loss_and_backward(
    net: &mut DetectorNet,
    input: &Tensor,
    targets: &[f64],
    mode: Mode,
    reduction: Reduction,
) -> Result<f64, DetectorError> {
    let logits = net.forward(input, mode)?;
    let (loss, grad) = bce_with_logits(&logits, targets, reduction)?;
    net.backward(&grad);
    Ok(loss)
}

/// Mean eval-mode loss over a dataset.
pub fn evaluate_loss(net: &DetectorNet, data: &[(Image, Mask)]) -> Result<f64, DetectorError> {
    let mut total = 0.0;
    for pair in data {
        let (x, y) = make_batch(&[pair]);
        let logits = net.infer(&x)?;
        total += bce_with_logits(&logits, &y, Reduction::Mean)?.0;
    }
    Ok(total / data.len() as f64)
}

fn check_pairs(data: &[(Image, Mask)], in_channels: usize) -> Result<(), DetectorError> {
    for (img, mask) in data {
        if (img.height(), img.width()) != (mask.height(), mask.width()) {
            return Err(DetectorError::ShapeMismatch(format!(
                "image {}x{} vs mask {}x{}",
                img.height(),
                img.width(),
                mask.height(),
                mask.width()
            )));
        }
        if img.channels() != in_channels {
            return Err(DetectorError::ChannelMismatch {
                expected: in_channels,
                found: img.channels(),
            });
        }
    }
    Ok(())
}

/// Mini-batch BCE training with decoupled weight decay and step decay of
/// the learning rate. Batches are shuffled each epoch from `cfg.seed`.
pub fn train_detector(
    train: &[(Image, Mask)],
    val: &[(Image, Mask)],
    arch: DetectorConfig,
    cfg: TrainConfig,
) -> Result<TrainedDetector, DetectorError> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(DetectorError::EmptyDataset);
    }
    check_pairs(train, arch.in_channels)?;
    check_pairs(val, arch.in_channels)?;
    let mut net = DetectorNet::new(arch, cfg.seed)?;
    let mut opt = AdamW::new(
        AdamWConfig {
            learning_rate: cfg.learning_rate,
            weight_decay: cfg.weight_decay,
            ..Default::default()
        },
        &net.param_sizes(),
    );
    let schedule = StepLr {
        base_lr: cfg.learning_rate,
        step_size: cfg.lr_step_size,
        gamma: cfg.lr_gamma,
    };
    let mut rng = seeded(cfg.seed.wrapping_add(1));
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut log = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let lr = schedule.lr_at(epoch);
        order.shuffle(&mut rng);
        let (mut sum, mut seen) = (0.0, 0usize);
        for chunk in order.chunks(cfg.batch_size) {
            let pairs: Vec<&(Image, Mask)> = chunk.iter().map(|&i| &train[i]).collect();
            let (x, y) = make_batch(&pairs);
            net.zero_grad();
            let loss = loss_and_backward(&mut net, &x, &y, Mode::Train, Reduction::Mean)?;
            if !loss.is_finite() {
                return Err(DetectorError::Diverged { epoch, loss });
            }
            opt.begin_step();
            for (slot, p) in net.params_mut().into_iter().enumerate() {
                opt.update(slot, &mut p.value, &p.grad, lr);
            }
            sum += loss * chunk.len() as f64;
            seen += chunk.len();
        }
        let train_loss = sum / seen as f64;
        let val_loss = if val.is_empty() {
            None
        } else {
            Some(evaluate_loss(&net, val)?)
        };
        tracing::debug!(epoch, train_loss, ?val_loss, lr, "detector epoch");
        log.push(EpochLog {
            epoch,
            learning_rate: lr,
            train_loss,
            val_loss,
        });
    }
    Ok(TrainedDetector { net, log })
}
