use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::detector::TrainConfig;
use crate::diffusion::{default_beta_range, DenoiserTrainConfig, DEFAULT_STEPS};
use crate::residual::{Preprocess, ResidualOption};
use crate::synthesis::{DropFieldConfig, RenderSettings};

pub const DEFAULT_SEED: u64 = 2023;
pub const DEFAULT_PATCH_SIZE: usize = 128;
pub const DEFAULT_TAU: u8 = 80;
pub const TOY_STEPS: usize = 200;
pub const TOY_PATCH_SIZE: usize = 32;

/// How the pseudo raindrop mask is produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "kebab-case")]
pub enum MaskMethod {
    /// Thresholded difference between the rainy image and its clean pair.
    Residual {
        #[serde(default = "default_option")]
        option: ResidualOption,
        #[serde(default = "default_tau")]
        tau: u8,
        #[serde(default)]
        preprocess: Preprocess,
    },
    /// Binarized output of a trained detector.
    Detector { checkpoint: PathBuf },
}

fn default_option() -> ResidualOption {
    ResidualOption::AbsoluteRgb
}

fn default_tau() -> u8 {
    DEFAULT_TAU
}

impl Default for MaskMethod {
    fn default() -> Self {
        MaskMethod::Residual {
            option: default_option(),
            tau: DEFAULT_TAU,
            preprocess: Preprocess::NONE,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DenoiserKind {
    /// Gaussian oracle fitted per image to its known pixels.
    #[default]
    Analytic,
    /// Trained MLP loaded from `DiffusionSettings::checkpoint`.
    Mlp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DiffusionSettings {
    pub steps: usize,
    /// Linear schedule endpoints; derived from `steps` when absent.
    pub beta_start: Option<f64>,
    pub beta_end: Option<f64>,
    pub denoiser: DenoiserKind,
    pub checkpoint: Option<PathBuf>,
    /// Side of the square center crop that is reconstructed.
    pub patch_size: usize,
    /// Reconstruct single-channel luma patches instead of RGB.
    pub grayscale: bool,
}

impl Default for DiffusionSettings {
    fn default() -> Self {
        DiffusionSettings {
            steps: DEFAULT_STEPS,
            beta_start: None,
            beta_end: None,
            denoiser: DenoiserKind::Analytic,
            checkpoint: None,
            patch_size: DEFAULT_PATCH_SIZE,
            grayscale: false,
        }
    }
}

impl DiffusionSettings {
    pub fn beta_range(&self) -> (f64, f64) {
        let (s, e) = default_beta_range(self.steps);
        (self.beta_start.unwrap_or(s), self.beta_end.unwrap_or(e))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthesisSettings {
    pub drops: DropFieldConfig,
    pub render: RenderSettings,
    /// Output size of generated examples, `(height, width)`.
    pub size: (usize, usize),
    /// Examples per split: train, val, test.
    pub counts: (usize, usize, usize),
}

impl Default for SynthesisSettings {
    fn default() -> Self {
        SynthesisSettings {
            drops: DropFieldConfig::default(),
            render: RenderSettings::default(),
            size: (480, 720),
            counts: (861, 58, 249),
        }
    }
}

/// Everything a run needs; loaded from TOML and overridden by CLI flags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    pub raindrop_root: Option<PathBuf>,
    pub cityscapes_root: Option<PathBuf>,
    pub mask: MaskMethod,
    pub diffusion: DiffusionSettings,
    pub synthesis: SynthesisSettings,
    pub detector_training: TrainConfig,
    pub denoiser_training: DenoiserTrainConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            seed: DEFAULT_SEED,
            output_dir: PathBuf::from("out"),
            raindrop_root: None,
            cityscapes_root: None,
            mask: MaskMethod::default(),
            diffusion: DiffusionSettings::default(),
            synthesis: SynthesisSettings::default(),
            detector_training: TrainConfig::default(),
            denoiser_training: DenoiserTrainConfig::default(),
        }
    }
}

impl PipelineConfig {
    /// Desk-scale profile: `T = 200` and 32x32 gray patches.
    pub fn toy() -> Self {
        let mut cfg = PipelineConfig::default();
        cfg.apply_toy();
        cfg
    }

    pub fn apply_toy(&mut self) {
        self.diffusion.steps = TOY_STEPS;
        self.diffusion.beta_start = None;
        self.diffusion.beta_end = None;
        self.diffusion.patch_size = TOY_PATCH_SIZE;
        self.diffusion.grayscale = true;
        self.synthesis.size = (64, 64);
        self.synthesis.counts = (40, 10, 10);
        self.synthesis.drops = DropFieldConfig {
            count_range: (3, 8),
            radius_range_px: (4.0, 9.0),
            ..self.synthesis.drops
        };
        self.detector_training = TrainConfig {
            epochs: 20,
            batch_size: 8,
            lr_step_size: 10,
            lr_gamma: 0.5,
            ..self.detector_training
        };
        self.denoiser_training.steps = 1500;
    }

    pub fn from_toml(text: &str) -> Result<Self, PipelineError> {
        toml::from_str(text).map_err(|e| PipelineError::Config(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, PipelineError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| PipelineError::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// Checks values and that every path the run will read exists.
    pub fn validate(&self) -> Result<(), PipelineError> {
        let missing = |what: &str, p: &Path| {
            if p.exists() {
                Ok(())
            } else {
                Err(PipelineError::Config(format!("{what} {} does not exist", p.display())))
            }
        };
        if let Some(p) = &self.raindrop_root {
            missing("raindrop_root", p)?;
        }
        if let Some(p) = &self.cityscapes_root {
            missing("cityscapes_root", p)?;
        }
        if let MaskMethod::Detector { checkpoint } = &self.mask {
            missing("detector checkpoint", checkpoint)?;
        }
        let d = &self.diffusion;
        if d.steps == 0 || d.patch_size == 0 {
            return Err(PipelineError::Config("diffusion steps and patch_size must be positive".into()));
        }
        match (d.denoiser, &d.checkpoint) {
            (DenoiserKind::Mlp, None) => {
                return Err(PipelineError::Config("the mlp denoiser needs diffusion.checkpoint".into()))
            }
            (DenoiserKind::Mlp, Some(p)) => missing("denoiser checkpoint", p)?,
            _ => {}
        }
        self.detector_training
            .validate()
            .map_err(|e| PipelineError::Config(e.to_string()))
    }
}
