//! Deterministic inputs for the kernel benchmarks.

use dropwiper::detector::Tensor;
use dropwiper::image::{GrayImage, Image};
use dropwiper::synthesis::{procedural_background, sample_drop_field, CameraParams, DropFieldConfig, RaindropField};

pub use dropwiper;

/// Values in `[-1, 1)` from a fixed linear congruential sequence.
pub fn ramp(len: usize, seed: u64) -> Vec<f64> {
    let mut s = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
    (0..len)
        .map(|_| {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (s >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
        })
        .collect()
}

pub fn tensor(n: usize, c: usize, h: usize, w: usize) -> Tensor {
    Tensor::from_vec(n, c, h, w, ramp(n * c * h * w, 7))
}

pub fn scene(h: usize, w: usize) -> Image {
    procedural_background(h, w, 3)
}

pub fn gray_pair(h: usize, w: usize) -> (GrayImage, GrayImage) {
    let a = ramp(h * w, 1).into_iter().map(|v| 0.5 + 0.5 * v).collect();
    let b = ramp(h * w, 2).into_iter().map(|v| 0.5 + 0.25 * v).collect();
    (GrayImage::from_vec(h, w, a).unwrap(), GrayImage::from_vec(h, w, b).unwrap())
}

pub fn drop_field(h: usize, w: usize) -> RaindropField {
    let cfg = DropFieldConfig { count_range: (10, 10), ..Default::default() };
    sample_drop_field(&cfg, CameraParams::for_width(w), (h, w)).unwrap()
}
