//! Polar ray casting against frame contours.
//!
//! Radii are found on the implicit form: along the ray `center + r * u` the
//! residual `rho(p - natural_center) - r_family(phi)` changes sign exactly
//! once for a star-shaped contour. When the query center coincides with the
//! family's natural center the polar form is explicit and the radius is
//! returned in closed form.

use nalgebra::Vector2;

use super::GeometryError;
use crate::contour::FrameContour;

const MARCH_STEPS: usize = 1024;
const BISECT_TOL_MM: f64 = 1e-13;

/// Radius from the contour's boxing center to the curve along `angle_rad`,
/// solved to well below 1e-9 mm.
pub fn ray_cast_radius(contour: &FrameContour, angle_rad: f64) -> Result<f64, GeometryError> {
    ray_cast_radius_from(contour, contour.boxing_center(), angle_rad)
}

/// Radius from an arbitrary query center (e.g. the region centroid).
pub fn ray_cast_radius_from(
    contour: &FrameContour,
    center: Vector2<f64>,
    angle_rad: f64,
) -> Result<f64, GeometryError> {
    let natural = contour.center_2d();
    if center.x == natural.x && center.y == natural.y {
        // Explicit polar graph: unique crossing by construction.
        return Ok(contour.radius_about_center(angle_rad));
    }

    let (sin_a, cos_a) = angle_rad.sin_cos();
    let dir = Vector2::new(cos_a, sin_a);
    let f = |r: f64| contour.polar_residual(center + dir * r);

    let r_hi = contour.radius_bound() + (center - natural).norm() + 1.0;
    let step = r_hi / MARCH_STEPS as f64;
    let mut brackets: Vec<(f64, f64, f64, f64)> = Vec::new();
    let mut exact_hits = 0usize;
    let mut prev_r = 0.0;
    let mut prev_f = f(0.0);
    if prev_f == 0.0 {
        exact_hits += 1;
    }
    for i in 1..=MARCH_STEPS {
        let r = i as f64 * step;
        let fr = f(r);
        if fr == 0.0 {
            exact_hits += 1;
        } else if prev_f != 0.0 && prev_f.signum() != fr.signum() {
            brackets.push((prev_r, r, prev_f, fr));
        }
        prev_r = r;
        prev_f = fr;
    }

    let crossings = brackets.len() + exact_hits;
    if crossings != 1 {
        return Err(GeometryError::NotStarShaped { angle_rad, crossings });
    }
    if exact_hits == 1 {
        // landed on the curve at a march node; recover that node
        return (0..=MARCH_STEPS)
            .map(|i| i as f64 * step)
            .find(|&r| f(r) == 0.0)
            .ok_or(GeometryError::NotStarShaped { angle_rad, crossings: 0 });
    }

    let (mut lo, mut hi, mut flo, _) = brackets[0];
    while hi - lo > BISECT_TOL_MM {
        let mid = 0.5 * (lo + hi);
        let fm = f(mid);
        if fm == 0.0 {
            return Ok(mid);
        }
        if fm.signum() == flo.signum() {
            lo = mid;
            flo = fm;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Number of times the ray from `center` along `angle_rad` crosses the curve,
/// by sign counting on a fixed march. Used by the star-shapedness check.
pub(crate) fn count_crossings(contour: &FrameContour, center: Vector2<f64>, angle_rad: f64) -> usize {
    let (sin_a, cos_a) = angle_rad.sin_cos();
    let dir = Vector2::new(cos_a, sin_a);
    let r_hi = contour.radius_bound() + (center - contour.center_2d()).norm() + 1.0;
    let step = r_hi / MARCH_STEPS as f64;
    let mut crossings = 0usize;
    let mut prev_f = contour.polar_residual(center);
    if prev_f == 0.0 {
        crossings += 1;
    }
    for i in 1..=MARCH_STEPS {
        let fr = contour.polar_residual(center + dir * (i as f64 * step));
        if fr == 0.0 {
            crossings += 1;
        } else if prev_f != 0.0 && prev_f.signum() != fr.signum() {
            crossings += 1;
        }
        prev_f = fr;
    }
    crossings
}
