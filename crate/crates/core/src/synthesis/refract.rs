use super::vec3::Vec3;
use super::SynthesisError;

const UNIT_TOLERANCE: f64 = 1e-6;

/// Vector Snell's law.
///
/// `normal` may face either side of the interface; it is flipped to oppose
/// `incident`. With `eta = n1 / n2` and `cos_i = -n·i`:
/// `t = eta·i + (eta·cos_i - cos_t)·n`, `cos_t = sqrt(1 - eta²(1 - cos_i²))`.
pub fn refract_ray(incident: Vec3, normal: Vec3, n1: f64, n2: f64) -> Result<Vec3, SynthesisError> {
    if !(n1 > 0.0 && n2 > 0.0) || !n1.is_finite() || !n2.is_finite() {
        return Err(SynthesisError::InvalidRay(format!(
            "refractive indices must be positive (got {n1}, {n2})"
        )));
    }
    if (incident.norm() - 1.0).abs() > UNIT_TOLERANCE || (normal.norm() - 1.0).abs() > UNIT_TOLERANCE
    {
        return Err(SynthesisError::InvalidRay(
            "incident and normal must be unit vectors".into(),
        ));
    }
    let mut n = normal;
    let mut cos_i = -n.dot(incident);
    if cos_i < 0.0 {
        n = -n;
        cos_i = -cos_i;
    }
    let eta = n1 / n2;
    let sin2_t = eta * eta * (1.0 - cos_i * cos_i);
    let disc = 1.0 - sin2_t;
    if disc < 0.0 {
        return Err(SynthesisError::TotalInternalReflection);
    }
    let cos_t = disc.sqrt();
    Ok((incident * eta + n * (eta * cos_i - cos_t)).normalized())
}
