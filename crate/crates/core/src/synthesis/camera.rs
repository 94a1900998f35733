use std::path::Path;

use serde::{Deserialize, Serialize};

use super::vec3::Vec3;
use super::SynthesisError;

/// Native image width the default focal length refers to.
pub const REFERENCE_WIDTH_PX: f64 = 2048.0;

/// Pinhole camera looking through a windshield at a flat background.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraParams {
    pub focal_length_px: f64,
    /// Camera to glass plane, along the optical axis.
    pub glass_distance_m: f64,
    /// Tilt of the glass about the horizontal image axis.
    pub glass_pitch_deg: f64,
    /// Depth of the fronto-parallel background plane.
    pub background_distance_m: f64,
    /// `(u0, v0)` = (column, row); image center when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub principal_point: Option<(f64, f64)>,
}

impl Default for CameraParams {
    fn default() -> Self {
        CameraParams {
            focal_length_px: 2262.0,
            glass_distance_m: 0.15,
            glass_pitch_deg: 0.0,
            background_distance_m: 10.0,
            principal_point: None,
        }
    }
}

impl CameraParams {
    pub fn validate(&self) -> Result<(), SynthesisError> {
        let bad = |m: &str| Err(SynthesisError::InvalidCamera(m.to_string()));
        if !(self.focal_length_px > 0.0) {
            return bad("focal_length_px must be positive");
        }
        if !(self.glass_distance_m > 0.0) {
            return bad("glass_distance_m must be positive");
        }
        if !(self.background_distance_m > self.glass_distance_m) {
            return bad("background_distance_m must exceed glass_distance_m");
        }
        if !(-45.0..=45.0).contains(&self.glass_pitch_deg) {
            return bad("glass_pitch_deg must lie in [-45, 45]");
        }
        Ok(())
    }

    /// Rescales intrinsics for an image resized from `from_width` to `to_width`.
    pub fn scaled(&self, from_width: f64, to_width: f64) -> CameraParams {
        let s = to_width / from_width;
        CameraParams {
            focal_length_px: self.focal_length_px * s,
            principal_point: self.principal_point.map(|(u, v)| (u * s, v * s)),
            ..*self
        }
    }

    /// Default camera with the focal length rescaled to an image `width` px wide.
    pub fn for_width(width: usize) -> CameraParams {
        CameraParams::default().scaled(REFERENCE_WIDTH_PX, width as f64)
    }

    pub(crate) fn principal(&self, height: usize, width: usize) -> (f64, f64) {
        self.principal_point
            .unwrap_or(((width as f64 - 1.0) / 2.0, (height as f64 - 1.0) / 2.0))
    }

    /// Unit normal of the glass plane, pointing back toward the camera.
    pub(crate) fn glass_normal(&self) -> Vec3 {
        let p = self.glass_pitch_deg.to_radians();
        Vec3::new(0.0, p.sin(), -p.cos())
    }

    /// In-plane glass axes matching image columns and rows.
    pub(crate) fn glass_axes(&self) -> (Vec3, Vec3) {
        let p = self.glass_pitch_deg.to_radians();
        (Vec3::new(1.0, 0.0, 0.0), Vec3::new(0.0, p.cos(), p.sin()))
    }

    /// Parses a Cityscapes-style camera file. Only `intrinsic.fx` (and
    /// `intrinsic.u0` / `intrinsic.v0` when present) are taken from it.
    pub fn from_cityscapes_json(text: &str) -> Result<CameraParams, SynthesisError> {
        let v: serde_json::Value = serde_json::from_str(text)
            .map_err(|e| SynthesisError::InvalidCamera(format!("camera json: {e}")))?;
        let intrinsic = v.get("intrinsic").ok_or_else(|| {
            SynthesisError::InvalidCamera("camera json has no 'intrinsic' object".into())
        })?;
        let field = |k: &str| intrinsic.get(k).and_then(serde_json::Value::as_f64);
        let mut cam = CameraParams::default();
        if let Some(fx) = field("fx") {
            cam.focal_length_px = fx;
        }
        if let (Some(u0), Some(v0)) = (field("u0"), field("v0")) {
            cam.principal_point = Some((u0, v0));
        }
        cam.validate()?;
        Ok(cam)
    }

    /// Camera file when readable, otherwise the defaults.
    pub fn load_or_default(path: Option<&Path>) -> Result<CameraParams, SynthesisError> {
        match path {
            Some(p) if p.is_file() => {
                let text = std::fs::read_to_string(p).map_err(|e| {
                    SynthesisError::InvalidCamera(format!("{}: {e}", p.display()))
                })?;
                CameraParams::from_cityscapes_json(&text)
            }
            _ => Ok(CameraParams::default()),
        }
    }
}
