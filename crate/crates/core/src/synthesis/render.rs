use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::camera::CameraParams;
use super::drop::{drop_surface, DropGeometry, RaindropField};
use super::refract::refract_ray;
use super::vec3::Vec3;
use super::SynthesisError;
use crate::image::{Image, Mask};

const AIR_REFRACTIVE_INDEX: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RenderSettings {
    /// Gain applied to background seen through a drop.
    pub attenuation: f64,
    /// Gain applied to the clean pixel when its ray is lost.
    pub lost_ray_darkening: f64,
}

impl Default for RenderSettings {
    fn default() -> Self {
        RenderSettings {
            attenuation: 0.9,
            lost_ray_darkening: 0.5,
        }
    }
}

/// Where the ray through one footprint pixel ends up.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RayTrace {
    /// Background hit, in (possibly out-of-frame) image coordinates.
    Source { row: f64, col: f64 },
    TotalInternalReflection,
    /// Refracted ray never reaches the background plane.
    Escaped,
}

/// Traces the camera ray through pixel `(row, col)` into `drop`.
///
/// The ray meets the cap at the drop's local height above the glass, bends
/// once (air to water) about the cap normal, and continues to the background
/// plane, which is projected back into the image.
pub fn trace_drop_pixel(
    row: f64,
    col: f64,
    drop: &DropGeometry,
    camera: &CameraParams,
    dims: (usize, usize),
) -> Option<RayTrace> {
    let surface = drop_surface((row - drop.center.0, col - drop.center.1), drop)?;
    let f = camera.focal_length_px;
    let (u0, v0) = camera.principal(dims.0, dims.1);
    let dir = Vec3::new((col - u0) / f, (row - v0) / f, 1.0).normalized();

    let glass_n = camera.glass_normal();
    let (ax_col, ax_row) = camera.glass_axes();
    // Pixel heights convert to meters at the glass depth.
    let metres_per_px = camera.glass_distance_m / f;
    let plane_point = Vec3::new(0.0, 0.0, camera.glass_distance_m)
        + glass_n * (surface.height * metres_per_px);
    let denom = glass_n.dot(dir);
    if denom.abs() < 1e-12 {
        return Some(RayTrace::Escaped);
    }
    let hit = dir * (glass_n.dot(plane_point) / denom);

    let local = surface.normal;
    let normal = (ax_col * local.x + ax_row * local.y + glass_n * local.z).normalized();
    let bent = match refract_ray(dir, normal, AIR_REFRACTIVE_INDEX, drop.refractive_index) {
        Ok(t) => t,
        Err(SynthesisError::TotalInternalReflection) => {
            return Some(RayTrace::TotalInternalReflection)
        }
        Err(_) => return Some(RayTrace::Escaped),
    };
    if bent.z <= 0.0 {
        return Some(RayTrace::Escaped);
    }
    let s = (camera.background_distance_m - hit.z) / bent.z;
    let bg = hit + bent * s;
    Some(RayTrace::Source {
        row: f * bg.y / bg.z + v0,
        col: f * bg.x / bg.z + u0,
    })
}

/// Index of the drop whose cap is highest at `(row, col)`.
fn top_drop(drops: &[DropGeometry], row: f64, col: f64) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, d) in drops.iter().enumerate() {
        if let Some(s) = drop_surface((row - d.center.0, col - d.center.1), d) {
            if best.map_or(true, |(_, h)| s.height > h) {
                best = Some((i, s.height));
            }
        }
    }
    best.map(|(i, _)| i)
}

/// Footprint union of all drops.
pub fn drop_mask(field: &RaindropField, dims: (usize, usize)) -> Mask {
    Mask::from_fn(dims.0, dims.1, |r, c| {
        field.drops.iter().any(|d| d.contains(r as f64, c as f64))
    })
}

pub fn render_drops(clean: &Image, field: &RaindropField) -> Result<(Image, Mask), SynthesisError> {
    render_drops_with(clean, field, RenderSettings::default())
}

/// Renders `field` over `clean`, returning the rainy image and the exact
/// footprint mask. Rows render in parallel; output does not depend on the
/// schedule.
pub fn render_drops_with(
    clean: &Image,
    field: &RaindropField,
    settings: RenderSettings,
) -> Result<(Image, Mask), SynthesisError> {
    if clean.channels() != 3 {
        return Err(SynthesisError::InvalidImage(
            "raindrop rendering needs an RGB image".into(),
        ));
    }
    let (h, w) = (clean.height(), clean.width());
    field.validate(h, w)?;
    let mask = drop_mask(field, (h, w));
    let rows: Vec<Vec<f64>> = (0..h)
        .into_par_iter()
        .map(|r| {
            let mut row_px = clean.data()[r * w * 3..(r + 1) * w * 3].to_vec();
            for c in 0..w {
                if !mask.get(r, c) {
                    continue;
                }
                let Some(idx) = top_drop(&field.drops, r as f64, c as f64) else {
                    continue;
                };
                let trace = trace_drop_pixel(r as f64, c as f64, &field.drops[idx], &field.camera, (h, w));
                let px = &mut row_px[c * 3..c * 3 + 3];
                let sampled = match trace {
                    Some(RayTrace::Source { row, col }) => (0..3)
                        .map(|ch| clean.bilinear(row, col, ch))
                        .collect::<Option<Vec<f64>>>(),
                    _ => None,
                };
                match sampled {
                    Some(v) => {
                        for ch in 0..3 {
                            px[ch] = (settings.attenuation * v[ch]).clamp(0.0, 1.0);
                        }
                    }
                    None => {
                        for v in px.iter_mut() {
                            *v = (settings.lost_ray_darkening * *v).clamp(0.0, 1.0);
                        }
                    }
                }
            }
            row_px
        })
        .collect();
    let data = rows.into_iter().flatten().collect();
    let rainy = Image::from_vec(h, w, 3, data).map_err(|e| SynthesisError::InvalidImage(e.to_string()))?;
    Ok((rainy, mask))
}

/// Bounding box `(rows, cols)` extent of the background region seen through
/// `drop`, over footprint pixels whose rays reach the background plane.
pub fn source_extent(
    drop: &DropGeometry,
    camera: &CameraParams,
    dims: (usize, usize),
) -> Option<(f64, f64)> {
    let (mut rmin, mut rmax) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut cmin, mut cmax) = (f64::INFINITY, f64::NEG_INFINITY);
    let a = drop.radius_px.ceil() as i64;
    let (cr, cc) = (drop.center.0.round() as i64, drop.center.1.round() as i64);
    for r in cr - a..=cr + a {
        for c in cc - a..=cc + a {
            if let Some(RayTrace::Source { row, col }) =
                trace_drop_pixel(r as f64, c as f64, drop, camera, dims)
            {
                rmin = rmin.min(row);
                rmax = rmax.max(row);
                cmin = cmin.min(col);
                cmax = cmax.max(col);
            }
        }
    }
    (rmin <= rmax).then(|| (rmax - rmin, cmax - cmin))
}
