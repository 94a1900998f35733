use rand::Rng;
use serde::{Deserialize, Serialize};

use super::camera::CameraParams;
use super::vec3::Vec3;
use super::SynthesisError;
use crate::rng::seeded;

pub const WATER_REFRACTIVE_INDEX: f64 = 1.33;
pub const MIN_DROP_RADIUS_PX: f64 = 2.0;
pub const MAX_DROP_COUNT: usize = 200;

/// A spherical-cap drop resting on the glass, in image pixel units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DropGeometry {
    /// `(row, col)` of the footprint center.
    pub center: (f64, f64),
    pub radius_px: f64,
    /// Cap apex height divided by the footprint radius, in `(0, 1]`.
    pub height_ratio: f64,
    #[serde(default = "default_index")]
    pub refractive_index: f64,
}

fn default_index() -> f64 {
    WATER_REFRACTIVE_INDEX
}

/// Height above the glass and outward unit normal at a footprint point.
/// The normal is in the drop frame, `+z` toward the camera.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurfacePoint {
    pub height: f64,
    pub normal: Vec3,
}

impl DropGeometry {
    pub fn new(center: (f64, f64), radius_px: f64, height_ratio: f64) -> Self {
        DropGeometry {
            center,
            radius_px,
            height_ratio,
            refractive_index: WATER_REFRACTIVE_INDEX,
        }
    }

    /// Radius of the sphere the cap is cut from: `(a² + h²) / 2h`.
    pub fn sphere_radius(&self) -> f64 {
        let a = self.radius_px;
        let h = self.height_ratio * a;
        (a * a + h * h) / (2.0 * h)
    }

    pub fn contains(&self, row: f64, col: f64) -> bool {
        let dr = row - self.center.0;
        let dc = col - self.center.1;
        dr * dr + dc * dc <= self.radius_px * self.radius_px
    }

    pub fn validate(&self, height: usize, width: usize) -> Result<(), SynthesisError> {
        let bad = |m: String| Err(SynthesisError::InvalidDrop(m));
        if !(self.radius_px >= MIN_DROP_RADIUS_PX) {
            return bad(format!("radius {} below {MIN_DROP_RADIUS_PX}", self.radius_px));
        }
        if !(self.height_ratio > 0.0 && self.height_ratio <= 1.0) {
            return bad(format!("height_ratio {} outside (0, 1]", self.height_ratio));
        }
        if !(self.refractive_index > 0.0) {
            return bad("refractive index must be positive".into());
        }
        let (r, c) = self.center;
        let a = self.radius_px;
        if r - a < 0.0 || c - a < 0.0 || r + a > (height - 1) as f64 || c + a > (width - 1) as f64 {
            return bad(format!(
                "drop at ({r}, {c}) radius {a} leaves the {height}x{width} image"
            ));
        }
        Ok(())
    }
}

/// Cap surface at `offset = (d_row, d_col)` from the drop center, or `None`
/// outside the footprint.
pub fn drop_surface(offset: (f64, f64), geom: &DropGeometry) -> Option<SurfacePoint> {
    let (dy, dx) = offset;
    let a = geom.radius_px;
    let rho2 = dx * dx + dy * dy;
    if rho2 > a * a {
        return None;
    }
    let big_r = geom.sphere_radius();
    let apex = geom.height_ratio * a;
    let root = (big_r * big_r - rho2).max(0.0).sqrt();
    let height = (root - (big_r - apex)).max(0.0);
    let normal = Vec3::new(dx / big_r, dy / big_r, root / big_r).normalized();
    Some(SurfacePoint { height, normal })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DropFieldConfig {
    /// Inclusive drop-count range.
    pub count_range: (usize, usize),
    pub radius_range_px: (f64, f64),
    pub height_ratio_range: (f64, f64),
    pub seed: u64,
}

impl Default for DropFieldConfig {
    fn default() -> Self {
        DropFieldConfig {
            count_range: (5, 20),
            radius_range_px: (8.0, 30.0),
            height_ratio_range: (0.3, 0.9),
            seed: 0,
        }
    }
}

impl DropFieldConfig {
    pub fn validate(&self) -> Result<(), SynthesisError> {
        let bad = |m: &str| Err(SynthesisError::InvalidRange(m.to_string()));
        let (c0, c1) = self.count_range;
        if c0 > c1 {
            return bad("count_range is inverted");
        }
        if c1 > MAX_DROP_COUNT {
            return bad("count_range exceeds 200 drops");
        }
        let (r0, r1) = self.radius_range_px;
        if !(r0 <= r1) || !(r0 >= MIN_DROP_RADIUS_PX) {
            return bad("radius_range_px must be ordered and start at >= 2 px");
        }
        let (h0, h1) = self.height_ratio_range;
        if !(h0 <= h1) || !(h0 > 0.0) || !(h1 <= 1.0) {
            return bad("height_ratio_range must be ordered inside (0, 1]");
        }
        Ok(())
    }
}

/// Everything needed to regenerate a rendered rainy image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RaindropField {
    pub drops: Vec<DropGeometry>,
    pub camera: CameraParams,
    pub rng_seed: u64,
}

impl RaindropField {
    pub fn empty(camera: CameraParams) -> Self {
        RaindropField {
            drops: Vec::new(),
            camera,
            rng_seed: 0,
        }
    }

    pub fn validate(&self, height: usize, width: usize) -> Result<(), SynthesisError> {
        self.camera.validate()?;
        if self.drops.len() > MAX_DROP_COUNT {
            return Err(SynthesisError::InvalidDrop(format!(
                "{} drops exceeds the limit of {MAX_DROP_COUNT}",
                self.drops.len()
            )));
        }
        self.drops.iter().try_for_each(|d| d.validate(height, width))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("field serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, SynthesisError> {
        serde_json::from_str(text).map_err(|e| SynthesisError::InvalidDrop(format!("field json: {e}")))
    }
}

fn uniform<R: Rng>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.gen_range(lo..=hi)
    }
}

/// Uniformly random drops; overlaps are allowed. Deterministic in `config.seed`.
pub fn sample_drop_field(
    config: &DropFieldConfig,
    camera: CameraParams,
    dims: (usize, usize),
) -> Result<RaindropField, SynthesisError> {
    config.validate()?;
    camera.validate()?;
    let (height, width) = dims;
    let max_r = config.radius_range_px.1;
    if config.count_range.1 > 0
        && (2.0 * config.radius_range_px.0 > (height.min(width) - 1) as f64)
    {
        return Err(SynthesisError::InvalidRange(format!(
            "radius range {:?} cannot fit in a {height}x{width} image",
            config.radius_range_px
        )));
    }
    let mut rng = seeded(config.seed);
    let count = rng.gen_range(config.count_range.0..=config.count_range.1);
    let mut drops = Vec::with_capacity(count);
    for _ in 0..count {
        // Clip the radius so the footprint fits; only matters for tiny images.
        let fit = ((height.min(width) - 1) as f64 / 2.0).min(max_r);
        let radius = uniform(&mut rng, config.radius_range_px.0, fit.max(config.radius_range_px.0));
        let height_ratio = uniform(
            &mut rng,
            config.height_ratio_range.0,
            config.height_ratio_range.1,
        );
        let row = uniform(&mut rng, radius, (height - 1) as f64 - radius);
        let col = uniform(&mut rng, radius, (width - 1) as f64 - radius);
        drops.push(DropGeometry::new((row, col), radius, height_ratio));
    }
    Ok(RaindropField {
        drops,
        camera,
        rng_seed: config.seed,
    })
}
