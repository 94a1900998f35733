//! Procedural scenes and drop renders for training without external data.

use rand::Rng;

use super::{render_drops, sample_drop_field, CameraParams, DropFieldConfig, RaindropField, SynthesisError};
use crate::image::{Image, Mask};
use crate::rng::{seeded, stream_seed};

/// A rendered training example.
#[derive(Debug, Clone)]
pub struct SyntheticPair {
    pub clean: Image,
    pub rainy: Image,
    pub mask: Mask,
    pub field: RaindropField,
}

/// Street-like RGB scene: sky gradient over a darker ground, a few
/// axis-aligned blocks, and low-amplitude sinusoidal texture.
pub fn procedural_background(height: usize, width: usize, seed: u64) -> Image {
    let mut rng = seeded(seed);
    let horizon = rng.gen_range(0.3..0.6) * height as f64;
    let sky: [f64; 3] = [rng.gen_range(0.5..0.8), rng.gen_range(0.6..0.9), rng.gen_range(0.8..1.0)];
    let ground: [f64; 3] = [rng.gen_range(0.1..0.4), rng.gen_range(0.1..0.4), rng.gen_range(0.1..0.4)];
    let blocks: Vec<(f64, f64, f64, f64, [f64; 3])> = (0..rng.gen_range(2..6))
        .map(|_| {
            let r0 = rng.gen_range(0.0..height as f64 * 0.7);
            let c0 = rng.gen_range(0.0..width as f64 * 0.8);
            let r1 = r0 + rng.gen_range(0.1..0.5) * height as f64;
            let c1 = c0 + rng.gen_range(0.05..0.3) * width as f64;
            let color = [rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0)];
            (r0, c0, r1, c1, color)
        })
        .collect();
    let freq = (rng.gen_range(0.1..0.4), rng.gen_range(0.1..0.4));
    let phase = rng.gen_range(0.0..std::f64::consts::TAU);
    Image::from_fn(height, width, 3, |r, c, ch| {
        let (rf, cf) = (r as f64, c as f64);
        let mut v = if rf < horizon {
            sky[ch] * (0.7 + 0.3 * rf / horizon.max(1.0))
        } else {
            ground[ch]
        };
        for &(r0, c0, r1, c1, color) in &blocks {
            if rf >= r0 && rf < r1 && cf >= c0 && cf < c1 {
                v = color[ch];
            }
        }
        v + 0.08 * (freq.0 * rf + freq.1 * cf + phase).sin()
    })
}

/// Renders `count` drop-covered scenes of size `dims`. Example `i` uses
/// seed stream `i` of `seed` for both its background and its drop field.
pub fn synthetic_pairs(
    count: usize,
    dims: (usize, usize),
    drops: &DropFieldConfig,
    seed: u64,
) -> Result<Vec<SyntheticPair>, SynthesisError> {
    let camera = CameraParams::for_width(dims.1);
    (0..count)
        .map(|i| {
            let s = stream_seed(seed, i as u64);
            let clean = procedural_background(dims.0, dims.1, s);
            let cfg = DropFieldConfig {
                seed: s.wrapping_mul(0x9E37_79B9_7F4A_7C15),
                ..*drops
            };
            let field = sample_drop_field(&cfg, camera, dims)?;
            let (rainy, mask) = render_drops(&clean, &field)?;
            Ok(SyntheticPair {
                clean,
                rainy,
                mask,
                field,
            })
        })
        .collect()
}
