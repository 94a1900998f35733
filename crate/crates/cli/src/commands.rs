use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use dropwiper::image::{load_image, load_mask, save_image};
use dropwiper::pipeline::{
    evaluate_dirs, reconstruct, run_pipeline, schedule_for, synthesize_dataset, train_denoiser_task,
    train_detector_task, DenoiserKind, DenoiserSource, MaskMethod, MaskSource, PipelineConfig,
};
use dropwiper::residual::{Preprocess, ResidualOption};

use crate::{Cli, Command, DenoiserArgs, GlobalArgs, MaskArgs, MaskKind};

pub const DETECTOR_CHECKPOINT: &str = "detector.ckpt";
pub const DETECTOR_LOG: &str = "detector_log.csv";
pub const DENOISER_CHECKPOINT: &str = "denoiser.ckpt";
pub const DENOISER_LOG: &str = "denoiser_loss.csv";
pub const EVAL_REPORT: &str = "eval.csv";

fn base_config(g: &GlobalArgs) -> Result<PipelineConfig> {
    let mut cfg = match &g.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if g.toy {
        cfg.apply_toy();
    }
    if let Some(seed) = g.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &g.out {
        cfg.output_dir = out.clone();
    }
    Ok(cfg)
}

fn apply_mask_args(cfg: &mut PipelineConfig, m: &MaskArgs) -> Result<()> {
    let method = match (m.method, &m.detector) {
        (Some(MaskKind::Residual), Some(_)) => bail!("--detector conflicts with --method residual"),
        (Some(MaskKind::Detector), None) if !matches!(cfg.mask, MaskMethod::Detector { .. }) => {
            bail!("--method detector needs --detector <checkpoint>")
        }
        (_, Some(_)) => MaskKind::Detector,
        (Some(k), None) => k,
        (None, None) => match cfg.mask {
            MaskMethod::Residual { .. } => MaskKind::Residual,
            MaskMethod::Detector { .. } => MaskKind::Detector,
        },
    };
    match method {
        MaskKind::Detector => {
            if let Some(p) = &m.detector {
                cfg.mask = MaskMethod::Detector { checkpoint: p.clone() };
            }
        }
        MaskKind::Residual => {
            let (mut option, mut tau, mut preprocess) = match &cfg.mask {
                MaskMethod::Residual {
                    option,
                    tau,
                    preprocess,
                } => (*option, *tau, *preprocess),
                MaskMethod::Detector { .. } => match MaskMethod::default() {
                    MaskMethod::Residual {
                        option,
                        tau,
                        preprocess,
                    } => (option, tau, preprocess),
                    MaskMethod::Detector { .. } => unreachable!(),
                },
            };
            if let Some(o) = &m.option {
                option = o.parse::<ResidualOption>().map_err(anyhow::Error::msg)?;
            }
            if let Some(t) = m.tau {
                tau = t;
            }
            if m.equalize {
                preprocess = Preprocess {
                    equalize: true,
                    ..preprocess
                };
            }
            cfg.mask = MaskMethod::Residual {
                option,
                tau,
                preprocess,
            };
        }
    }
    Ok(())
}

fn apply_denoiser_args(cfg: &mut PipelineConfig, d: &DenoiserArgs) {
    if let Some(p) = &d.denoiser {
        cfg.diffusion.denoiser = DenoiserKind::Mlp;
        cfg.diffusion.checkpoint = Some(p.clone());
    }
    if let Some(t) = d.steps {
        cfg.diffusion.steps = t;
        cfg.diffusion.beta_start = None;
        cfg.diffusion.beta_end = None;
    }
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn write(path: PathBuf, text: &str) -> Result<()> {
    std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))
}

fn stem(p: &Path) -> String {
    p.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "image".into())
}

pub fn run(cli: Cli) -> Result<()> {
    let mut cfg = base_config(&cli.global)?;
    let out = cfg.output_dir.clone();
    match cli.command {
        Command::Synthesize {
            cityscapes,
            counts,
            size,
        } => {
            if cityscapes.is_some() {
                cfg.cityscapes_root = cityscapes;
            }
            if let Some(c) = counts {
                cfg.synthesis.counts = c;
            }
            if let Some(s) = size {
                cfg.synthesis.size = s;
            }
            cfg.validate()?;
            let s = synthesize_dataset(&cfg, &out)?;
            println!(
                "wrote {} train, {} val, {} test examples to {} ({} backgrounds skipped)",
                s.train,
                s.val,
                s.test,
                out.display(),
                s.skipped
            );
        }
        Command::Mask { rainy, clean, mask } => {
            apply_mask_args(&mut cfg, &mask)?;
            cfg.validate()?;
            let source = MaskSource::from_method(&cfg.mask)?;
            let img = load_image(&rainy)?;
            let clean = clean.as_ref().map(load_image).transpose()?;
            let m = source.mask(&img, clean.as_ref())?;
            ensure_dir(&out)?;
            let path = out.join(format!("{}_mask.png", stem(&rainy)));
            save_image(&m, &path)?;
            println!("{} ({} of {} pixels marked)", path.display(), m.count(), m.data().len());
        }
        Command::TrainDetector {
            dataset,
            epochs,
            batch_size,
            lr,
        } => {
            let t = &mut cfg.detector_training;
            if let Some(e) = epochs {
                t.epochs = e;
            }
            if let Some(b) = batch_size {
                t.batch_size = b;
            }
            if let Some(l) = lr {
                t.learning_rate = l;
            }
            cfg.validate()?;
            let trained = train_detector_task(&cfg, dataset.as_deref())?;
            ensure_dir(&out)?;
            trained.net.to_checkpoint().save(out.join(DETECTOR_CHECKPOINT))?;
            write(out.join(DETECTOR_LOG), &trained.log_csv())?;
            let last = trained.log.last().expect("at least one epoch");
            println!(
                "detector ({} parameters): final train loss {:.6}; saved {}",
                trained.net.parameter_count(),
                last.train_loss,
                out.join(DETECTOR_CHECKPOINT).display()
            );
        }
        Command::TrainDenoiser {
            dataset,
            iterations,
            steps,
        } => {
            if let Some(i) = iterations {
                cfg.denoiser_training.steps = i;
            }
            apply_denoiser_args(&mut cfg, &DenoiserArgs { denoiser: None, steps });
            cfg.validate()?;
            let trained = train_denoiser_task(&cfg, dataset.as_deref())?;
            ensure_dir(&out)?;
            trained.denoiser.to_checkpoint().save(out.join(DENOISER_CHECKPOINT))?;
            write(out.join(DENOISER_LOG), &trained.loss_csv())?;
            println!(
                "denoiser: eval loss {:.6} -> {:.6}; saved {}",
                trained.initial_eval_loss,
                trained.final_eval_loss,
                out.join(DENOISER_CHECKPOINT).display()
            );
        }
        Command::Inpaint {
            image,
            mask,
            denoiser,
        } => {
            apply_denoiser_args(&mut cfg, &denoiser);
            cfg.validate()?;
            let img = load_image(&image)?;
            let m = load_mask(&mask)?;
            let source = DenoiserSource::from_settings(&cfg.diffusion)?;
            let sched = schedule_for(&cfg.diffusion)?;
            let recon = reconstruct(&img, &m, &source, &sched, cfg.seed)?;
            ensure_dir(&out)?;
            let path = out.join(format!("{}_inpainted.png", stem(&image)));
            save_image(&recon, &path)?;
            println!("{}", path.display());
        }
        Command::Eval { pred, clean } => {
            let (csv, unmatched) = evaluate_dirs(&pred, &clean)?;
            ensure_dir(&out)?;
            write(out.join(EVAL_REPORT), &csv)?;
            print!("{csv}");
            if unmatched > 0 {
                eprintln!("{unmatched} predictions had no clean partner");
            }
        }
        Command::Pipeline {
            dataset,
            mask,
            denoiser,
            patch_size,
        } => {
            if dataset.is_some() {
                cfg.raindrop_root = dataset;
            }
            apply_mask_args(&mut cfg, &mask)?;
            apply_denoiser_args(&mut cfg, &denoiser);
            if let Some(p) = patch_size {
                cfg.diffusion.patch_size = p;
            }
            let report = run_pipeline(&cfg)?;
            println!(
                "{} images processed, {} failed, {} unpaired files; report in {}",
                report.rows.len(),
                report.failures.len(),
                report.unpaired,
                report.output_dir.display()
            );
        }
    }
    Ok(())
}
