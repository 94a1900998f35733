use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;

use super::config::{DenoiserKind, DiffusionSettings, MaskMethod, PipelineConfig};
use super::ingest::{load_pair, scan_raindrop_dataset, PairPaths, RaindropPair, Split};
use super::PipelineError;
use crate::checkpoint::{file_sha256, Checkpoint};
use crate::detector::{binarize, detector_forward, DetectorNet, DEFAULT_THRESHOLD};
use crate::diffusion::{
    inpaint_sample, AnalyticGaussianDenoiser, Denoiser, MlpDenoiser, NoiseSchedule,
};
use crate::image::{center_crop, center_crop_mask, save_image, to_grayscale, Image, Mask};
use crate::metrics::{eval_csv, mask_score, psnr, ssim, EvalRow};
use crate::residual::residual_mask;

pub const REPORT_FILE: &str = "report.csv";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const MASK_DIR: &str = "masks";
pub const RECON_DIR: &str = "recon";

/// Mask generator with any model already loaded.
pub enum MaskSource {
    Residual(MaskMethod),
    Detector(Box<DetectorNet>),
}

impl MaskSource {
    pub fn from_method(method: &MaskMethod) -> Result<Self, PipelineError> {
        Ok(match method {
            MaskMethod::Residual { .. } => MaskSource::Residual(method.clone()),
            MaskMethod::Detector { checkpoint } => {
                let ck = Checkpoint::load(checkpoint)?;
                MaskSource::Detector(Box::new(DetectorNet::from_checkpoint(&ck)?))
            }
        })
    }

    /// Mask for `rainy`. The residual method needs the `clean` partner.
    pub fn mask(&self, rainy: &Image, clean: Option<&Image>) -> Result<Mask, PipelineError> {
        match self {
            MaskSource::Residual(MaskMethod::Residual {
                option,
                tau,
                preprocess,
            }) => {
                let clean = clean.ok_or_else(|| {
                    PipelineError::Config("residual masks need the clean image".into())
                })?;
                Ok(residual_mask(rainy, clean, *option, *tau, *preprocess)?)
            }
            MaskSource::Residual(MaskMethod::Detector { .. }) => unreachable!("built from_method"),
            MaskSource::Detector(net) => {
                Ok(binarize(&detector_forward(net, rainy)?, DEFAULT_THRESHOLD))
            }
        }
    }
}

/// Noise predictor used for reconstruction.
pub enum DenoiserSource {
    /// Fit a Gaussian to each image's known pixels.
    Analytic,
    Mlp(Box<MlpDenoiser>),
}

impl DenoiserSource {
    pub fn from_settings(d: &DiffusionSettings) -> Result<Self, PipelineError> {
        match (d.denoiser, &d.checkpoint) {
            (DenoiserKind::Analytic, _) => Ok(DenoiserSource::Analytic),
            (DenoiserKind::Mlp, Some(path)) => {
                let net = MlpDenoiser::from_checkpoint(&Checkpoint::load(path)?)?;
                if net.arch().steps != d.steps {
                    return Err(PipelineError::Config(format!(
                        "denoiser was trained for T={}, config has T={}",
                        net.arch().steps,
                        d.steps
                    )));
                }
                Ok(DenoiserSource::Mlp(Box::new(net)))
            }
            (DenoiserKind::Mlp, None) => {
                Err(PipelineError::Config("the mlp denoiser needs a checkpoint".into()))
            }
        }
    }
}

pub fn schedule_for(d: &DiffusionSettings) -> Result<NoiseSchedule, PipelineError> {
    let (start, end) = d.beta_range();
    Ok(NoiseSchedule::linear(d.steps, start, end)?)
}

/// Maps `[0, 1]` pixels to the `[-1, 1]` diffusion space.
pub fn to_model_space(img: &Image) -> Vec<f64> {
    img.data().iter().map(|&v| 2.0 * v - 1.0).collect()
}

fn analytic_for(x0: &[f64], missing: &[f64], channels: usize, sched: &NoiseSchedule) -> AnalyticGaussianDenoiser {
    let mut sum = vec![0.0; channels];
    let mut count = vec![0usize; channels];
    for (i, (&v, &m)) in x0.iter().zip(missing).enumerate() {
        if m == 0.0 {
            sum[i % channels] += v;
            count[i % channels] += 1;
        }
    }
    let means: Vec<f64> = sum
        .iter()
        .zip(&count)
        .map(|(s, &n)| if n > 0 { s / n as f64 } else { 0.0 })
        .collect();
    let (mut ss, mut n) = (0.0, 0usize);
    for (i, (&v, &m)) in x0.iter().zip(missing).enumerate() {
        if m == 0.0 {
            ss += (v - means[i % channels]).powi(2);
            n += 1;
        }
    }
    let sigma = if n > 1 { (ss / n as f64).sqrt().max(1e-3) } else { 0.5 };
    let mu0 = (0..x0.len()).map(|i| means[i % channels]).collect();
    AnalyticGaussianDenoiser::new(mu0, sigma, sched.clone())
}

/// Regenerates the pixels of `img` under `mask` (1 = missing). Pixels outside
/// the mask are copied from `img` unchanged.
pub fn reconstruct(
    img: &Image,
    mask: &Mask,
    denoiser: &DenoiserSource,
    sched: &NoiseSchedule,
    seed: u64,
) -> Result<Image, PipelineError> {
    if (img.height(), img.width()) != (mask.height(), mask.width()) {
        return Err(PipelineError::Config(format!(
            "image {}x{} vs mask {}x{}",
            img.height(),
            img.width(),
            mask.height(),
            mask.width()
        )));
    }
    if mask.is_empty() {
        return Ok(img.clone());
    }
    let c = img.channels();
    let x0 = to_model_space(img);
    let missing = mask.to_f64(c);
    let mut rng = crate::rng::seeded(seed);
    let out = match denoiser {
        DenoiserSource::Analytic => {
            let den = analytic_for(&x0, &missing, c, sched);
            inpaint_sample(&x0, &missing, &den, sched, &mut rng)?
        }
        DenoiserSource::Mlp(net) => {
            if net.arch().input_dim != x0.len() {
                return Err(PipelineError::Config(format!(
                    "denoiser expects {} values, patch has {}",
                    net.arch().input_dim,
                    x0.len()
                )));
            }
            inpaint_sample(&x0, &missing, net.as_ref() as &dyn Denoiser, sched, &mut rng)?
        }
    };
    let data = img
        .data()
        .iter()
        .zip(&missing)
        .zip(&out)
        .map(|((&orig, &m), &v)| if m == 1.0 { ((v + 1.0) / 2.0).clamp(0.0, 1.0) } else { orig })
        .collect();
    Ok(Image::from_vec(img.height(), img.width(), c, data)?)
}

fn as_gray_image(img: &Image) -> Image {
    to_grayscale(img).into()
}

/// Result for one processed pair.
#[derive(Debug, Clone)]
pub struct PairOutcome {
    pub row: EvalRow,
    pub mask: Mask,
    pub reconstruction: Image,
}

/// Mask, crop, reconstruct and score one pair; `index` selects its seed stream.
pub fn process_pair(
    pair: &RaindropPair,
    index: usize,
    cfg: &PipelineConfig,
    masks: &MaskSource,
    denoiser: &DenoiserSource,
    sched: &NoiseSchedule,
) -> Result<PairOutcome, PipelineError> {
    let p = cfg.diffusion.patch_size;
    let rainy = center_crop(&pair.rainy, p, p)?;
    let clean = center_crop(&pair.clean, p, p)?;
    let mask = match masks {
        MaskSource::Residual(_) => {
            center_crop_mask(&masks.mask(&pair.rainy, Some(&pair.clean))?, p, p)?
        }
        // The detector sees the crop itself so its stride constraint
        // applies to the patch size only.
        MaskSource::Detector(_) => masks.mask(&rainy, None)?,
    };
    let (rainy, clean) = if cfg.diffusion.grayscale {
        (as_gray_image(&rainy), as_gray_image(&clean))
    } else {
        (rainy, clean)
    };
    let seed = crate::rng::stream_seed(cfg.seed, index as u64);
    let reconstruction = reconstruct(&rainy, &mask, denoiser, sched, seed)?;
    let truth = pair
        .mask
        .as_ref()
        .map(|m| center_crop_mask(m, p, p))
        .transpose()?;
    let row = EvalRow {
        image_id: pair.id.clone(),
        psnr: psnr(&reconstruction, &clean)?,
        ssim: ssim(&to_grayscale(&reconstruction), &to_grayscale(&clean))?,
        mask: truth.map(|t| mask_score(&mask, &t)).transpose()?,
    };
    Ok(PairOutcome {
        row,
        mask,
        reconstruction,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct Failure {
    pub image_id: String,
    pub error: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub tool_version: &'static str,
    pub seed: u64,
    pub config: PipelineConfig,
    /// Path to SHA-256 of every model file read.
    pub checkpoints: BTreeMap<String, String>,
    pub processed: usize,
    pub failures: Vec<Failure>,
    pub unpaired_files: usize,
}

#[derive(Debug, Clone)]
pub struct PipelineReport {
    pub rows: Vec<EvalRow>,
    pub failures: Vec<Failure>,
    pub unpaired: usize,
    pub output_dir: PathBuf,
}

impl PipelineReport {
    pub fn csv(&self) -> String {
        eval_csv(&self.rows)
    }
}

fn checkpoint_hashes(cfg: &PipelineConfig) -> Result<BTreeMap<String, String>, PipelineError> {
    let mut out = BTreeMap::new();
    let mut add = |p: &Path| -> Result<(), PipelineError> {
        let digest = file_sha256(p).map_err(|e| PipelineError::io(p, e))?;
        out.insert(p.display().to_string(), digest);
        Ok(())
    };
    if let MaskMethod::Detector { checkpoint } = &cfg.mask {
        add(checkpoint)?;
    }
    if cfg.diffusion.denoiser == DenoiserKind::Mlp {
        if let Some(p) = &cfg.diffusion.checkpoint {
            add(p)?;
        }
    }
    Ok(out)
}

pub(crate) fn write_text(path: &Path, text: &str) -> Result<(), PipelineError> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| PipelineError::io(dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| PipelineError::io(path, e))
}

/// Runs mask generation and reconstruction over the test split of
/// `cfg.raindrop_root`, writing per-image PNGs, `report.csv` and
/// `manifest.json` under `cfg.output_dir`. Per-image failures are recorded
/// and skipped; the run fails only when every image fails.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<PipelineReport, PipelineError> {
    cfg.validate()?;
    let root = cfg
        .raindrop_root
        .as_ref()
        .ok_or_else(|| PipelineError::Config("raindrop_root is required".into()))?;
    let (paths, unpaired) = scan_raindrop_dataset(root)?;
    let test: Vec<&PairPaths> = paths.iter().filter(|p| p.split == Split::Test).collect();
    let masks = MaskSource::from_method(&cfg.mask)?;
    let denoiser = DenoiserSource::from_settings(&cfg.diffusion)?;
    let sched = schedule_for(&cfg.diffusion)?;
    let out = &cfg.output_dir;
    let (mask_dir, recon_dir) = (out.join(MASK_DIR), out.join(RECON_DIR));
    for d in [&mask_dir, &recon_dir] {
        std::fs::create_dir_all(d).map_err(|e| PipelineError::io(d, e))?;
    }

    let results: Vec<Result<EvalRow, Failure>> = test
        .par_iter()
        .enumerate()
        .map(|(i, paths)| {
            let run = || -> Result<EvalRow, PipelineError> {
                let pair = load_pair(paths)?;
                let o = process_pair(&pair, i, cfg, &masks, &denoiser, &sched)?;
                save_image(&o.mask, mask_dir.join(format!("{}.png", pair.id)))?;
                save_image(&o.reconstruction, recon_dir.join(format!("{}.png", pair.id)))?;
                Ok(o.row)
            };
            run().map_err(|e| {
                tracing::warn!(image = %paths.id, error = %e, "image failed");
                Failure {
                    image_id: paths.id.clone(),
                    error: e.to_string(),
                }
            })
        })
        .collect();
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for r in results {
        match r {
            Ok(row) => rows.push(row),
            Err(f) => failures.push(f),
        }
    }
    let report = PipelineReport {
        rows,
        failures,
        unpaired,
        output_dir: out.clone(),
    };
    write_text(&out.join(REPORT_FILE), &report.csv())?;
    let manifest = Manifest {
        tool_version: env!("CARGO_PKG_VERSION"),
        seed: cfg.seed,
        config: cfg.clone(),
        checkpoints: checkpoint_hashes(cfg)?,
        processed: report.rows.len(),
        failures: report.failures.clone(),
        unpaired_files: unpaired,
    };
    write_text(
        &out.join(MANIFEST_FILE),
        &serde_json::to_string_pretty(&manifest).expect("manifest serializes"),
    )?;
    tracing::info!(processed = report.rows.len(), failed = report.failures.len(), "pipeline done");
    if report.rows.is_empty() {
        return Err(PipelineError::AllFailed(report.failures.len()));
    }
    Ok(report)
}

/// Center crop of the gray or RGB patch a run reconstructs.
pub fn model_patch(img: &Image, d: &DiffusionSettings) -> Result<Image, PipelineError> {
    let crop = center_crop(img, d.patch_size, d.patch_size)?;
    Ok(if d.grayscale { as_gray_image(&crop) } else { crop })
}
