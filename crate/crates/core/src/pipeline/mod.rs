//! Two-step pipeline: pseudo raindrop masks, then masked diffusion
//! reconstruction, plus dataset ingestion and training entry points.

mod config;
mod ingest;
mod run;
mod tasks;

pub use config::{
    DenoiserKind, DiffusionSettings, MaskMethod, PipelineConfig, SynthesisSettings, DEFAULT_PATCH_SIZE,
    DEFAULT_SEED, DEFAULT_TAU, TOY_PATCH_SIZE, TOY_STEPS,
};
pub use ingest::{
    ingest_cityscapes, ingest_raindrop_dataset, load_pair, pair_split, scan_raindrop_dataset,
    CityscapesImage, CityscapesSet, PairPaths, RaindropDataset, RaindropPair, Split,
};
pub use run::{
    model_patch, process_pair, reconstruct, run_pipeline, schedule_for, to_model_space,
    DenoiserSource, Failure, Manifest, MaskSource, PairOutcome, PipelineReport, MANIFEST_FILE,
    MASK_DIR, RECON_DIR, REPORT_FILE,
};
pub use tasks::{
    denoiser_patches, detector_examples, evaluate_dirs, synthesize_dataset, train_denoiser_task,
    train_detector_task, SynthesisSummary,
};

use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::checkpoint::CheckpointError;
use crate::detector::DetectorError;
use crate::diffusion::DiffusionError;
use crate::image::ImageError;
use crate::metrics::MetricsError;
use crate::synthesis::SynthesisError;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("config: {0}")]
    Config(String),
    #[error("dataset: {0}")]
    Dataset(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Detector(#[from] DetectorError),
    #[error(transparent)]
    Diffusion(#[from] DiffusionError),
    #[error(transparent)]
    Synthesis(#[from] SynthesisError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("all {0} images failed")]
    AllFailed(usize),
}

impl PipelineError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        PipelineError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    /// Process exit status for this error.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) => 2,
            PipelineError::Dataset(_) => 3,
            PipelineError::Io { .. } => 4,
            PipelineError::Image(e) => e.code(),
            PipelineError::Checkpoint(_) => 5,
            PipelineError::Detector(_) => 6,
            PipelineError::Diffusion(_) => 7,
            PipelineError::Synthesis(_) => 8,
            PipelineError::Metrics(_) => 9,
            PipelineError::AllFailed(_) => 1,
        }
    }
}
