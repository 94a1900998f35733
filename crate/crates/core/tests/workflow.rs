//! Cross-module flows through the public API.

use dropwiper::checkpoint::Checkpoint;
use dropwiper::detector::{detector_forward, DetectorConfig, DetectorNet};
use dropwiper::diffusion::{DenoiserArch, Denoiser, MlpDenoiser, NoiseSchedule};
use dropwiper::image::{load_image, load_mask, save_image, Image};
use dropwiper::metrics::mask_score;
use dropwiper::pipeline::{reconstruct, DenoiserSource};
use dropwiper::residual::{residual_mask, Preprocess, ResidualOption, THRESHOLD_SWEEP};
use dropwiper::synthesis::{synthetic_pairs, DropFieldConfig, SyntheticPair};
use proptest::prelude::*;

fn toy_drops() -> DropFieldConfig {
    DropFieldConfig { count_range: (3, 8), radius_range_px: (4.0, 9.0), ..Default::default() }
}

fn pairs(n: usize, seed: u64) -> Vec<SyntheticPair> {
    synthetic_pairs(n, (48, 64), &toy_drops(), seed).unwrap()
}

#[test]
fn residual_masks_stay_inside_rendered_drops() {
    for p in pairs(8, 1) {
        for opt in ResidualOption::ALL {
            for tau in THRESHOLD_SWEEP {
                let m = residual_mask(&p.rainy, &p.clean, opt, tau, Preprocess::NONE).unwrap();
                assert!(m.is_subset_of(&p.mask), "option {opt}, tau {tau}");
            }
        }
        // Rendering only touches footprint pixels.
        let outside = residual_mask(&p.rainy, &p.clean, ResidualOption::AbsoluteRgb, 0, Preprocess::NONE).unwrap();
        assert!(mask_score(&outside, &p.mask).unwrap().false_positives == 0);
    }
}

#[test]
fn dataset_files_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    for (i, p) in pairs(3, 2).into_iter().enumerate() {
        let rainy = dir.path().join(format!("{i}_rain.png"));
        let mask = dir.path().join(format!("{i}_mask.pgm"));
        save_image(&p.rainy, &rainy).unwrap();
        save_image(&p.mask, &mask).unwrap();
        assert_eq!(load_image(&rainy).unwrap(), p.rainy.quantized());
        assert_eq!(load_mask(&mask).unwrap(), p.mask);
    }
}

#[test]
fn reconstruction_regenerates_only_the_footprint() {
    let sched = NoiseSchedule::linear_default(50).unwrap();
    for (i, p) in pairs(3, 3).into_iter().enumerate() {
        let out = reconstruct(&p.rainy, &p.mask, &DenoiserSource::Analytic, &sched, i as u64).unwrap();
        assert!(out.data().iter().all(|v| (0.0..=1.0).contains(v)));
        for r in 0..out.height() {
            for c in 0..out.width() {
                if !p.mask.get(r, c) {
                    assert_eq!(out.pixel(r, c), p.rainy.pixel(r, c));
                }
            }
        }
    }
}

#[test]
fn checkpoints_survive_disk() {
    let dir = tempfile::tempdir().unwrap();
    let net = DetectorNet::new(DetectorConfig::miniature(), 4).unwrap();
    let path = dir.path().join("det.ckpt");
    net.to_checkpoint().save(&path).unwrap();
    let back = DetectorNet::from_checkpoint(&Checkpoint::load(&path).unwrap()).unwrap();
    let img = &pairs(1, 4)[0].rainy;
    let crop = Image::from_fn(48, 64, 3, |r, c, ch| img.get(r, c, ch));
    // Weights are stored as f32.
    let (a, b) = (detector_forward(&net, &crop).unwrap(), detector_forward(&back, &crop).unwrap());
    assert!(a.data().iter().zip(b.data()).all(|(x, y)| (x - y).abs() < 1e-4));

    let mlp = MlpDenoiser::new(DenoiserArch::toy(16, 20), 5).unwrap();
    let path = dir.path().join("den.ckpt");
    mlp.to_checkpoint().save(&path).unwrap();
    let back = MlpDenoiser::from_checkpoint(&Checkpoint::load(&path).unwrap()).unwrap();
    let x = vec![0.25; 16];
    let (a, b) = (mlp.predict_noise(&x, 7), back.predict_noise(&x, 7));
    assert!(a.iter().zip(&b).all(|(x, y)| (x - y).abs() < 1e-4));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn threshold_sweep_is_nested(seed in 0u64..1000) {
        let p = &pairs(1, seed)[0];
        for opt in ResidualOption::ALL {
            let masks: Vec<_> = THRESHOLD_SWEEP
                .iter()
                .map(|&t| residual_mask(&p.rainy, &p.clean, opt, t, Preprocess::NONE).unwrap())
                .collect();
            for w in masks.windows(2) {
                prop_assert!(w[1].is_subset_of(&w[0]));
            }
        }
    }
}
