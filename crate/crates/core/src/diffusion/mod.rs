//! Denoising diffusion: schedule, forward and reverse processes, a toy
//! trainable noise predictor and masked reconstruction.

mod denoiser;
mod mlp;
mod process;
mod sampler;
mod schedule;
mod train;

pub use denoiser::{AnalyticGaussianDenoiser, Denoiser, ZeroDenoiser};
pub use mlp::{DenoiserArch, MlpDenoiser};
pub use process::{
    forward_sample, forward_step, reverse_mean, reverse_step, reverse_step_with, LatentState,
    ReverseVariance,
};
pub use sampler::{inpaint_sample, inpaint_sample_with, sample, MaskConvention};
pub use schedule::{
    default_beta_range, make_schedule, NoiseSchedule, DEFAULT_BETA_END, DEFAULT_BETA_START, DEFAULT_STEPS,
};
pub use train::{train_denoiser, DenoiserTrainConfig, TrainedDenoiser};

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum DiffusionError {
    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),
    #[error("step {t} outside the schedule (T = {steps})")]
    StepOutOfRange { t: usize, steps: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("non-finite values: {0}")]
    NonFinite(String),
    #[error("mask value {0} is not 0 or 1")]
    NonBinaryMask(f64),
    #[error("empty dataset")]
    EmptyDataset,
    #[error("invalid architecture or training config: {0}")]
    InvalidArch(String),
    #[error("training diverged at step {step} (loss {loss})")]
    Diverged { step: usize, loss: f64 },
}
