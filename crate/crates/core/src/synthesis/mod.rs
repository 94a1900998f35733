//! Synthetic raindrops from a single-refraction ray tracer.
//!
//! Drops are spherical caps on the windshield. Each pixel inside a drop
//! footprint is traced from the pinhole camera, bent once at the cap surface
//! and followed to a flat background plane. Because the cap acts as a strong
//! converging lens, a drop shows an inverted, contracted view of a much larger
//! patch of the scene.

mod camera;
mod dataset;
mod drop;
mod refract;
mod render;
mod vec3;

pub use camera::{CameraParams, REFERENCE_WIDTH_PX};
pub use dataset::{procedural_background, synthetic_pairs, SyntheticPair};
pub use drop::{
    drop_surface, sample_drop_field, DropFieldConfig, DropGeometry, RaindropField, SurfacePoint,
    MAX_DROP_COUNT, MIN_DROP_RADIUS_PX, WATER_REFRACTIVE_INDEX,
};
pub use refract::refract_ray;
pub use render::{
    drop_mask, render_drops, render_drops_with, source_extent, trace_drop_pixel, RayTrace,
    RenderSettings,
};
pub use vec3::Vec3;

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum SynthesisError {
    #[error("total internal reflection")]
    TotalInternalReflection,
    #[error("invalid ray: {0}")]
    InvalidRay(String),
    #[error("invalid camera: {0}")]
    InvalidCamera(String),
    #[error("invalid drop: {0}")]
    InvalidDrop(String),
    #[error("invalid range: {0}")]
    InvalidRange(String),
    #[error("invalid image: {0}")]
    InvalidImage(String),
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::Image;
    use crate::rng::seeded;
    use rand::Rng;

    fn unit_from_angles(theta: f64, phi: f64) -> Vec3 {
        Vec3::new(theta.sin() * phi.cos(), theta.sin() * phi.sin(), theta.cos())
    }

    fn angle_between(a: Vec3, b: Vec3) -> f64 {
        a.cross(b).norm().atan2(a.dot(b))
    }

    #[test]
    fn normal_incidence_passes_straight() {
        let n = Vec3::new(0.0, 0.0, 1.0);
        let i = Vec3::new(0.0, 0.0, -1.0);
        for (n1, n2) in [(1.0, 1.33), (1.33, 1.0), (1.0, 2.4)] {
            let t = refract_ray(i, n, n1, n2).unwrap();
            assert!((t - i).norm() < 1e-15);
        }
    }

    #[test]
    fn matched_indices_leave_direction_unchanged() {
        let n = Vec3::new(0.0, 0.0, 1.0);
        let mut rng = seeded(2);
        for _ in 0..100 {
            let i = -unit_from_angles(rng.gen_range(0.0..1.5), rng.gen_range(0.0..6.28));
            let t = refract_ray(i, n, 1.2, 1.2).unwrap();
            assert!((t - i).norm() < 1e-12);
        }
    }

    #[test]
    fn forty_five_degrees_into_water() {
        let n = Vec3::new(0.0, 0.0, 1.0);
        let theta = 45f64.to_radians();
        let i = Vec3::new(theta.sin(), 0.0, -theta.cos());
        let t = refract_ray(i, n, 1.0, 1.33).unwrap();
        let expected = (theta.sin() / 1.33).asin();
        assert!((angle_between(t, -n) - expected).abs() < 1e-12);
        assert!((expected.to_degrees() - 32.12).abs() < 0.01);
    }

    #[test]
    fn total_internal_reflection_threshold() {
        let n = Vec3::new(0.0, 0.0, 1.0);
        let (n1, n2) = (1.33f64, 1.0f64);
        let critical = (n2 / n1).asin();
        for delta in [-1e-6f64, 1e-6] {
            let theta: f64 = critical + delta;
            let i = Vec3::new(theta.sin(), 0.0, -theta.cos());
            let r = refract_ray(i, n, n1, n2);
            if delta > 0.0 {
                assert_eq!(r, Err(SynthesisError::TotalInternalReflection));
            } else {
                assert!(r.is_ok());
            }
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        let n = Vec3::new(0.0, 0.0, 1.0);
        assert!(matches!(
            refract_ray(Vec3::new(0.0, 0.0, -2.0), n, 1.0, 1.33),
            Err(SynthesisError::InvalidRay(_))
        ));
        assert!(matches!(
            refract_ray(-n, n, 0.0, 1.33),
            Err(SynthesisError::InvalidRay(_))
        ));
    }

    #[test]
    fn refraction_reverses() {
        let mut rng = seeded(3);
        for _ in 0..1000 {
            let n = unit_from_angles(rng.gen_range(0.0..3.14), rng.gen_range(0.0..6.28));
            let i = -unit_from_angles(rng.gen_range(0.0..1.5), rng.gen_range(0.0..6.28));
            let (n1, n2) = (rng.gen_range(1.0..2.0), rng.gen_range(1.0..2.0));
            let Ok(t) = refract_ray(i, n, n1, n2) else { continue };
            let back = refract_ray(t, n, n2, n1).unwrap();
            assert!((back - i).norm() < 1e-6);
        }
    }

    #[test]
    fn cap_apex_and_rim() {
        let g = DropGeometry::new((10.0, 10.0), 5.0, 0.6);
        let apex = drop_surface((0.0, 0.0), &g).unwrap();
        assert!((apex.normal - Vec3::new(0.0, 0.0, 1.0)).norm() < 1e-15);
        assert!((apex.height - 3.0).abs() < 1e-12);
        let rim = drop_surface((3.0, 4.0), &g).unwrap();
        assert!(rim.height.abs() < 1e-12);
        assert!(drop_surface((3.0, 4.01), &g).is_none());
    }

    #[test]
    fn cap_normal_matches_finite_difference_gradient() {
        let g = DropGeometry::new((0.0, 0.0), 6.0, 1.0);
        let height = |dy: f64, dx: f64| drop_surface((dy, dx), &g).unwrap().height;
        let h = 1e-5;
        for angle in [0.0f64, 0.7, 2.0, 4.1] {
            let (dy, dx) = (3.0 * angle.sin(), 3.0 * angle.cos());
            let gx = (height(dy, dx + h) - height(dy, dx - h)) / (2.0 * h);
            let gy = (height(dy + h, dx) - height(dy - h, dx)) / (2.0 * h);
            let fd = Vec3::new(-gx, -gy, 1.0).normalized();
            let n = drop_surface((dy, dx), &g).unwrap().normal;
            assert!((fd - n).norm() < 1e-4, "{fd:?} vs {n:?}");
        }
    }

    #[test]
    fn field_sampling() {
        let cam = CameraParams::default();
        let empty = DropFieldConfig {
            count_range: (0, 0),
            ..Default::default()
        };
        assert!(sample_drop_field(&empty, cam, (100, 100)).unwrap().drops.is_empty());

        let cfg = DropFieldConfig {
            count_range: (5, 5),
            radius_range_px: (4.0, 9.0),
            height_ratio_range: (0.3, 1.0),
            seed: 7,
        };
        let a = sample_drop_field(&cfg, cam, (120, 160)).unwrap();
        assert_eq!(a, sample_drop_field(&cfg, cam, (120, 160)).unwrap());
        assert_eq!(a.drops.len(), 5);
        for d in &a.drops {
            assert!((4.0..=9.0).contains(&d.radius_px));
            assert!((0.3..=1.0).contains(&d.height_ratio));
            d.validate(120, 160).unwrap();
        }
        assert_eq!(RaindropField::from_json(&a.to_json()).unwrap(), a);
    }

    #[test]
    fn field_sampling_rejects_bad_ranges() {
        let cam = CameraParams::default();
        for cfg in [
            DropFieldConfig { count_range: (3, 2), ..Default::default() },
            DropFieldConfig { count_range: (0, 201), ..Default::default() },
            DropFieldConfig { radius_range_px: (9.0, 4.0), ..Default::default() },
            DropFieldConfig { radius_range_px: (1.0, 4.0), ..Default::default() },
            DropFieldConfig { height_ratio_range: (0.0, 0.5), ..Default::default() },
            DropFieldConfig { height_ratio_range: (0.5, 1.5), ..Default::default() },
        ] {
            assert!(matches!(
                sample_drop_field(&cfg, cam, (200, 200)),
                Err(SynthesisError::InvalidRange(_))
            ));
        }
    }

    #[test]
    fn camera_json() {
        let text = r#"{"extrinsic": {"baseline": 0.209313, "pitch": 0.038, "roll": 0.0,
            "x": 1.7, "y": 0.0, "yaw": -0.0195, "z": 1.22},
            "intrinsic": {"fx": 2262.52, "fy": 2265.3017905988554, "u0": 1096.98, "v0": 513.137}}"#;
        let cam = CameraParams::from_cityscapes_json(text).unwrap();
        assert_eq!(cam.focal_length_px, 2262.52);
        assert_eq!(cam.principal_point, Some((1096.98, 513.137)));
        assert_eq!(cam.glass_distance_m, 0.15);
        assert!(CameraParams::from_cityscapes_json("{}").is_err());
        assert_eq!(
            CameraParams::load_or_default(Some(std::path::Path::new("/no/such.json"))).unwrap(),
            CameraParams::default()
        );
    }

    fn test_scene(h: usize, w: usize) -> Image {
        Image::from_fn(h, w, 3, |r, c, ch| {
            0.2 + 0.6 * (r as f64 / h as f64) * (0.5 + 0.5 * ((c + 7 * ch) as f64 * 0.3).sin())
        })
    }

    #[test]
    fn empty_field_is_identity() {
        let img = test_scene(32, 48);
        let (out, mask) = render_drops(&img, &RaindropField::empty(CameraParams::for_width(48))).unwrap();
        assert_eq!(out, img);
        assert!(mask.is_empty());
    }

    #[test]
    fn changes_stay_inside_exact_footprints() {
        let img = test_scene(96, 128);
        let cfg = DropFieldConfig {
            count_range: (6, 6),
            radius_range_px: (3.0, 10.0),
            height_ratio_range: (0.3, 1.0),
            seed: 19,
        };
        let field = sample_drop_field(&cfg, CameraParams::for_width(128), (96, 128)).unwrap();
        let (out, mask) = render_drops(&img, &field).unwrap();
        for r in 0..96 {
            for c in 0..128 {
                let inside = field.drops.iter().any(|d| {
                    let (dr, dc) = (r as f64 - d.center.0, c as f64 - d.center.1);
                    dr * dr + dc * dc <= d.radius_px * d.radius_px
                });
                assert_eq!(mask.get(r, c), inside);
                if out.pixel(r, c) != img.pixel(r, c) {
                    assert!(inside);
                }
            }
        }
        assert!(mask.count() > 0);
        let (again, mask2) = render_drops(&img, &field).unwrap();
        assert_eq!(again, out);
        assert_eq!(mask2, mask);
    }

    #[test]
    fn drops_never_brighten_their_source() {
        let img = test_scene(64, 64);
        let field = RaindropField {
            drops: vec![
                DropGeometry::new((20.0, 20.0), 6.0, 0.8),
                DropGeometry::new((40.0, 44.0), 5.0, 0.4),
            ],
            camera: CameraParams::for_width(64),
            rng_seed: 0,
        };
        let (out, mask) = render_drops(&img, &field).unwrap();
        let (mut rendered, mut source, mut n) = (0.0, 0.0, 0);
        for r in 0..64 {
            for c in 0..64 {
                if !mask.get(r, c) {
                    continue;
                }
                let d = field.drops.iter().find(|d| d.contains(r as f64, c as f64)).unwrap();
                let src = match trace_drop_pixel(r as f64, c as f64, d, &field.camera, (64, 64)) {
                    Some(RayTrace::Source { row, col }) => img.bilinear(row, col, 0),
                    _ => None,
                }
                .unwrap_or(img.get(r, c, 0));
                rendered += out.get(r, c, 0);
                source += src;
                n += 1;
            }
        }
        assert!(n > 0);
        assert!(rendered / n as f64 <= source / n as f64);
    }

    #[test]
    fn drop_shows_contracted_background() {
        // Vertical gradient: the row a pixel samples is readable from its value.
        let (h, w) = (480, 640);
        let img = Image::from_fn(h, w, 3, |r, _, _| r as f64 / (h - 1) as f64);
        let camera = CameraParams::for_width(w);
        let drop = DropGeometry::new((239.5, 319.5), 12.0, 0.7);
        let (rows, _) = source_extent(&drop, &camera, (h, w)).unwrap();
        assert!(rows > 2.0 * drop.radius_px, "source rows {rows}");
        let field = RaindropField { drops: vec![drop], camera, rng_seed: 0 };
        let (out, mask) = render_drops(&img, &field).unwrap();
        let inside: Vec<f64> = (0..h)
            .flat_map(|r| (0..w).map(move |c| (r, c)))
            .filter(|&(r, c)| mask.get(r, c))
            .filter(|&(r, c)| {
                matches!(
                    trace_drop_pixel(r as f64, c as f64, &drop, &camera, (h, w)),
                    Some(RayTrace::Source { row, col })
                        if img.bilinear(row, col, 0).is_some()
                )
            })
            .map(|(r, c)| out.get(r, c, 0))
            .collect();
        assert!(!inside.is_empty());
        let lo = inside.iter().cloned().fold(f64::INFINITY, f64::min) / 0.9;
        let hi = inside.iter().cloned().fold(f64::NEG_INFINITY, f64::max) / 0.9;
        assert!((hi - lo) * (h - 1) as f64 > 2.0 * drop.radius_px);
    }

    #[test]
    fn render_rejects_gray_and_bad_fields() {
        let gray = Image::new(16, 16, 1);
        let cam = CameraParams::for_width(16);
        assert!(render_drops(&gray, &RaindropField::empty(cam)).is_err());
        let rgb = Image::new(16, 16, 3);
        let off_frame = RaindropField {
            drops: vec![DropGeometry::new((1.0, 1.0), 4.0, 0.5)],
            camera: cam,
            rng_seed: 0,
        };
        assert!(matches!(
            render_drops(&rgb, &off_frame),
            Err(SynthesisError::InvalidDrop(_))
        ));
    }
}
