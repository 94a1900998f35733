//! Raindrop detector CNN with hand-written backpropagation.

mod layers;
mod loss;
mod net;
mod tensor;
mod train;

pub use layers::{
    BatchNorm2d, Conv2d, ConvTranspose2d, Layer, LayerKind, LayerSpec, LeakyRelu, Mode, Param,
    BN_EPS, BN_MOMENTUM,
};
pub use loss::{binarize, bce_loss, bce_with_logits, Reduction, DEFAULT_THRESHOLD, PROB_CLAMP};
pub use net::{
    build_detector, detector_forward, image_to_tensor, sigmoid, DetectorConfig, DetectorNet,
    ResidualBlock, NEGATIVE_SLOPE, STRIDE_MULTIPLE,
};
pub use tensor::Tensor;
pub use train::{
    evaluate_loss, loss_and_backward, make_batch, train_detector, EpochLog, TrainConfig,
    TrainedDetector, DEFAULT_BATCH_SIZE, DEFAULT_EPOCHS, DEFAULT_LEARNING_RATE,
    DEFAULT_LR_GAMMA, DEFAULT_LR_STEP_SIZE, DEFAULT_SEED, DEFAULT_WEIGHT_DECAY,
};

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum DetectorError {
    #[error("input {height}x{width} is not divisible by 8 (three stride-2 stages)")]
    IndivisibleSize { height: usize, width: usize },
    #[error("expected {expected} input channels, got {found}")]
    ChannelMismatch { expected: usize, found: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid detector config: {0}")]
    InvalidConfig(String),
    #[error("empty training set")]
    EmptyDataset,
    #[error("training diverged in epoch {epoch} (loss {loss})")]
    Diverged { epoch: usize, loss: f64 },
}

#[cfg(test)]
mod tests;
