//! Dataset generation and model training entry points.

use std::path::{Path, PathBuf};

use rand::Rng;

use super::config::PipelineConfig;
use super::ingest::{ingest_cityscapes, ingest_raindrop_dataset, load_pair, pair_split, Split};
use super::run::{model_patch, schedule_for, to_model_space, write_text};
use super::PipelineError;
use crate::detector::{train_detector, DetectorConfig, TrainedDetector, STRIDE_MULTIPLE};
use crate::diffusion::{train_denoiser, DenoiserArch, TrainedDenoiser};
use crate::image::{center_crop, center_crop_mask, load_image, save_image, to_grayscale, Image, Mask};
use crate::metrics::{eval_csv, psnr, ssim, EvalRow};
use crate::rng::{seeded, stream_seed};
use crate::synthesis::{
    procedural_background, render_drops_with, sample_drop_field, CameraParams, DropFieldConfig,
    REFERENCE_WIDTH_PX,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct SynthesisSummary {
    pub train: usize,
    pub val: usize,
    pub test: usize,
    /// Background images that could not be cropped to the output size.
    pub skipped: usize,
}

/// Writes a Raindrop-layout dataset of rendered drops under `out`:
/// `<split>/<id>_rain.png`, `_clean.png`, `_mask.png` and `_drops.json`.
///
/// Backgrounds come from `cfg.cityscapes_root` when set (center-cropped to
/// `cfg.synthesis.size`, used in file order and cycled), otherwise from the
/// procedural scene generator. Example `i` uses seed stream `i` of `cfg.seed`.
pub fn synthesize_dataset(cfg: &PipelineConfig, out: &Path) -> Result<SynthesisSummary, PipelineError> {
    let s = &cfg.synthesis;
    let (h, w) = s.size;
    let mut summary = SynthesisSummary::default();
    let backgrounds: Option<Vec<(Image, CameraParams)>> = match &cfg.cityscapes_root {
        Some(root) => {
            let set = ingest_cityscapes(root)?;
            let mut usable = Vec::new();
            for item in set.images {
                match center_crop(&item.image, h, w) {
                    Ok(img) if img.channels() == 3 => {
                        // Calibration refers to the full-width frame.
                        let cam = item.camera.scaled(REFERENCE_WIDTH_PX, item.image.width() as f64);
                        usable.push((img, cam));
                    }
                    _ => summary.skipped += 1,
                }
            }
            if usable.is_empty() {
                return Err(PipelineError::Dataset(format!(
                    "no background in {} is at least {h}x{w} RGB",
                    root.display()
                )));
            }
            Some(usable)
        }
        None => None,
    };
    let (n_train, n_val, n_test) = s.counts;
    let plan = Split::ALL.into_iter().zip([n_train, n_val, n_test]);
    let mut index = 0usize;
    for (split, count) in plan {
        let dir = out.join(split.dir_name());
        std::fs::create_dir_all(&dir).map_err(|e| PipelineError::io(&dir, e))?;
        for k in 0..count {
            let seed = stream_seed(cfg.seed, index as u64);
            let (clean, camera) = match &backgrounds {
                Some(b) => b[index % b.len()].clone(),
                None => (procedural_background(h, w, seed), CameraParams::for_width(w)),
            };
            let drops = DropFieldConfig {
                seed: seed.wrapping_mul(0x9E37_79B9_7F4A_7C15),
                ..s.drops
            };
            let field = sample_drop_field(&drops, camera, (h, w))?;
            let (rainy, mask) = render_drops_with(&clean, &field, s.render)?;
            let id = format!("{split}{k:04}");
            save_image(&rainy, dir.join(format!("{id}_rain.png")))?;
            save_image(&clean, dir.join(format!("{id}_clean.png")))?;
            save_image(&mask, dir.join(format!("{id}_mask.png")))?;
            write_text(&dir.join(format!("{id}_drops.json")), &field.to_json())?;
            index += 1;
        }
    }
    summary.train = n_train;
    summary.val = n_val;
    summary.test = n_test;
    Ok(summary)
}

fn stride_crop(img: &Image, mask: &Mask) -> Result<(Image, Mask), PipelineError> {
    let h = img.height() / STRIDE_MULTIPLE * STRIDE_MULTIPLE;
    let w = img.width() / STRIDE_MULTIPLE * STRIDE_MULTIPLE;
    Ok((center_crop(img, h, w)?, center_crop_mask(mask, h, w)?))
}

/// Loads `(rainy, mask)` examples of one split from a synthesized dataset.
pub fn detector_examples(root: &Path, split: Split) -> Result<Vec<(Image, Mask)>, PipelineError> {
    let (paths, _) = pair_split(&root.join(split.dir_name()), split)?;
    let mut out = Vec::new();
    for p in &paths {
        let pair = load_pair(p)?;
        let mask = pair.mask.ok_or_else(|| {
            PipelineError::Dataset(format!("pair '{}' has no _mask file", pair.id))
        })?;
        out.push(stride_crop(&pair.rainy, &mask)?);
    }
    Ok(out)
}

/// Trains the detector on a synthesized dataset at `root`, or on freshly
/// rendered procedural examples when `root` is `None`.
pub fn train_detector_task(cfg: &PipelineConfig, root: Option<&Path>) -> Result<TrainedDetector, PipelineError> {
    let (train, val) = match root {
        Some(r) => (detector_examples(r, Split::Train)?, detector_examples(r, Split::Val)?),
        None => {
            let s = &cfg.synthesis;
            let pairs = crate::synthesis::synthetic_pairs(s.counts.0 + s.counts.1, s.size, &s.drops, cfg.seed)?;
            let mut all: Vec<(Image, Mask)> = Vec::new();
            for p in pairs {
                all.push(stride_crop(&p.rainy, &p.mask)?);
            }
            let val = all.split_off(s.counts.0);
            (all, val)
        }
    };
    let tc = crate::detector::TrainConfig {
        seed: cfg.seed,
        ..cfg.detector_training
    };
    Ok(train_detector(&train, &val, DetectorConfig::default(), tc)?)
}

/// Clean training patches in model space: the center crop plus random crops
/// of every train-split clean image, or procedural scenes without a dataset.
pub fn denoiser_patches(cfg: &PipelineConfig, root: Option<&Path>) -> Result<Vec<Vec<f64>>, PipelineError> {
    let d = &cfg.diffusion;
    let p = d.patch_size;
    let mut rng = seeded(cfg.seed);
    let mut out = Vec::new();
    let mut add_crops = |img: &Image, rng: &mut crate::rng::Rng| -> Result<(), PipelineError> {
        out.push(to_model_space(&model_patch(img, d)?));
        if img.height() > p && img.width() > p {
            for _ in 0..3 {
                let (top, left) = (rng.gen_range(0..=img.height() - p), rng.gen_range(0..=img.width() - p));
                let crop = Image::from_fn(p, p, img.channels(), |r, c, ch| img.get(top + r, left + c, ch));
                let crop = if d.grayscale { to_grayscale(&crop).into() } else { crop };
                out.push(to_model_space(&crop));
            }
        }
        Ok(())
    };
    match root {
        Some(r) => {
            let ds = ingest_raindrop_dataset(r)?;
            for pair in ds.split(Split::Train) {
                add_crops(&pair.clean, &mut rng)?;
            }
        }
        None => {
            let (h, w) = cfg.synthesis.size;
            for i in 0..cfg.synthesis.counts.0.max(1) {
                let img = procedural_background(h.max(p), w.max(p), stream_seed(cfg.seed, i as u64));
                add_crops(&img, &mut rng)?;
            }
        }
    }
    Ok(out)
}

pub fn train_denoiser_task(cfg: &PipelineConfig, root: Option<&Path>) -> Result<TrainedDenoiser, PipelineError> {
    let data = denoiser_patches(cfg, root)?;
    let dim = data.first().map(Vec::len).unwrap_or(0);
    let sched = schedule_for(&cfg.diffusion)?;
    let arch = DenoiserArch::toy(dim, cfg.diffusion.steps);
    let tc = crate::diffusion::DenoiserTrainConfig {
        seed: cfg.seed,
        ..cfg.denoiser_training
    };
    Ok(train_denoiser(&data, arch, tc, &sched)?)
}

fn find_partner(dir: &Path, id: &str) -> Option<PathBuf> {
    ["png", "ppm", "pgm", "pnm"]
        .iter()
        .flat_map(|ext| [dir.join(format!("{id}_clean.{ext}")), dir.join(format!("{id}.{ext}"))])
        .find(|p| p.is_file())
}

/// Scores every image in `pred_dir` against the same-stem image (or
/// `<stem>_clean`) in `clean_dir`, center-cropping and converting the clean
/// image to the prediction's shape. Returns the CSV text and the number of
/// predictions without a partner.
pub fn evaluate_dirs(pred_dir: &Path, clean_dir: &Path) -> Result<(String, usize), PipelineError> {
    let mut preds: Vec<PathBuf> = std::fs::read_dir(pred_dir)
        .map_err(|e| PipelineError::io(pred_dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file())
        .collect();
    preds.sort();
    let mut rows = Vec::new();
    let mut unmatched = 0;
    for path in preds {
        let Some(id) = path.file_stem().and_then(|s| s.to_str()).map(str::to_string) else {
            continue;
        };
        let Some(partner) = find_partner(clean_dir, &id) else {
            unmatched += 1;
            continue;
        };
        let pred = load_image(&path)?;
        let clean = center_crop(&load_image(&partner)?, pred.height(), pred.width())?;
        let clean = if pred.channels() == 1 && clean.channels() == 3 {
            to_grayscale(&clean).into()
        } else {
            clean
        };
        rows.push(EvalRow {
            image_id: id,
            psnr: psnr(&pred, &clean)?,
            ssim: ssim(&to_grayscale(&pred), &to_grayscale(&clean))?,
            mask: None,
        });
    }
    Ok((eval_csv(&rows), unmatched))
}
