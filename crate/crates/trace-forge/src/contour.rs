//! Parametric inner-edge contours of eyeglass frames.
//!
//! A contour is a closed curve in its frame plane, given in polar form about a
//! "natural" center: `r(phi)` for the circle, ellipse, superellipse and
//! Fourier families. The curve may additionally be rotated in-plane and
//! positioned anywhere in plane coordinates. All radii are millimetres.
//!
//! Two reference centers matter downstream:
//! * the boxing center — center of the curve's axis-aligned bounding box, the
//!   origin the radial trace is measured from;
//! * the region centroid — the alternative center some tracers use.

use nalgebra::Vector2;

use crate::geometry::raycast;
use crate::geometry::{FramePlane, GeometryError};

pub const SEMI_AXIS_MIN_MM: f64 = 12.0;
pub const SEMI_AXIS_MAX_MM: f64 = 32.0;
pub const FOURIER_MAX_ORDER: usize = 8;
pub const FOURIER_MAX_AMPLITUDE: f64 = 0.1;
const SUPERELLIPSE_EXP_MIN: f64 = 2.0;
const SUPERELLIPSE_EXP_MAX: f64 = 12.0;
const STAR_CHECK_RAYS: usize = 3600;

/// Which reference center a trace is measured from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CenterMode {
    /// Center of the axis-aligned bounding box (boxing-system convention).
    #[default]
    Boxing,
    /// Centroid of the enclosed region.
    Centroid,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ContourFamily {
    Circle {
        radius_mm: f64,
    },
    Ellipse {
        a_mm: f64,
        b_mm: f64,
    },
    Superellipse {
        a_mm: f64,
        b_mm: f64,
        exponent: f64,
    },
    /// `r(phi) = r0 * (1 + sum_k cos_coeffs[k-1] cos(k phi) + sin_coeffs[k-1] sin(k phi))`
    /// with dimensionless coefficients up to order 8.
    Fourier {
        r0_mm: f64,
        cos_coeffs: Vec<f64>,
        sin_coeffs: Vec<f64>,
    },
}

impl ContourFamily {
    fn validate(&self) -> Result<(), GeometryError> {
        let bad = |msg: String| Err(GeometryError::InvalidContour(msg));
        let check_axis = |name: &str, v: f64| {
            if !(SEMI_AXIS_MIN_MM..=SEMI_AXIS_MAX_MM).contains(&v) {
                bad(format!("{name} = {v} mm outside [{SEMI_AXIS_MIN_MM}, {SEMI_AXIS_MAX_MM}]"))
            } else {
                Ok(())
            }
        };
        match self {
            ContourFamily::Circle { radius_mm } => check_axis("radius", *radius_mm),
            ContourFamily::Ellipse { a_mm, b_mm } => {
                check_axis("a", *a_mm)?;
                check_axis("b", *b_mm)
            }
            ContourFamily::Superellipse { a_mm, b_mm, exponent } => {
                check_axis("a", *a_mm)?;
                check_axis("b", *b_mm)?;
                if !(SUPERELLIPSE_EXP_MIN..=SUPERELLIPSE_EXP_MAX).contains(exponent) {
                    bad(format!(
                        "superellipse exponent {exponent} outside [{SUPERELLIPSE_EXP_MIN}, {SUPERELLIPSE_EXP_MAX}]"
                    ))
                } else {
                    Ok(())
                }
            }
            ContourFamily::Fourier { r0_mm, cos_coeffs, sin_coeffs } => {
                check_axis("r0", *r0_mm)?;
                if cos_coeffs.len() > FOURIER_MAX_ORDER || sin_coeffs.len() > FOURIER_MAX_ORDER {
                    return bad(format!(
                        "Fourier order above {FOURIER_MAX_ORDER}: {} cos / {} sin terms",
                        cos_coeffs.len(),
                        sin_coeffs.len()
                    ));
                }
                let amp: f64 = cos_coeffs.iter().chain(sin_coeffs).map(|c| c.abs()).sum();
                if amp > FOURIER_MAX_AMPLITUDE + 1e-12 {
                    return bad(format!(
                        "Fourier perturbation amplitude {amp:.4} above {FOURIER_MAX_AMPLITUDE} of mean radius"
                    ));
                }
                Ok(())
            }
        }
    }

    /// Polar radius about the natural center, in the family's own frame
    /// (rotation not applied).
    pub fn radius_at(&self, phi: f64) -> f64 {
        match self {
            ContourFamily::Circle { radius_mm } => *radius_mm,
            ContourFamily::Ellipse { a_mm, b_mm } => {
                let (s, c) = phi.sin_cos();
                a_mm * b_mm / (b_mm * c).hypot(a_mm * s)
            }
            ContourFamily::Superellipse { a_mm, b_mm, exponent } => {
                let (s, c) = phi.sin_cos();
                ((c / a_mm).abs().powf(*exponent) + (s / b_mm).abs().powf(*exponent))
                    .powf(-1.0 / exponent)
            }
            ContourFamily::Fourier { r0_mm, cos_coeffs, sin_coeffs } => {
                // cos/sin(k phi) by recurrence; avoids 16 trig calls per eval.
                let (s1, c1) = phi.sin_cos();
                let mut sum = 1.0;
                let (mut ck, mut sk) = (c1, s1);
                for k in 0..FOURIER_MAX_ORDER {
                    if let Some(a) = cos_coeffs.get(k) {
                        sum += a * ck;
                    }
                    if let Some(b) = sin_coeffs.get(k) {
                        sum += b * sk;
                    }
                    let c_next = ck * c1 - sk * s1;
                    sk = sk * c1 + ck * s1;
                    ck = c_next;
                }
                r0_mm * sum
            }
        }
    }

    /// Upper bound on the polar radius over all angles.
    pub fn radius_bound(&self) -> f64 {
        match self {
            ContourFamily::Circle { radius_mm } => *radius_mm,
            ContourFamily::Ellipse { a_mm, b_mm } => a_mm.max(*b_mm),
            // the curve fills the a x b rectangle as the exponent grows, so
            // the diagonal radius exceeds max(a, b); the corner bounds it
            ContourFamily::Superellipse { a_mm, b_mm, .. } => a_mm.hypot(*b_mm),
            ContourFamily::Fourier { r0_mm, cos_coeffs, sin_coeffs } => {
                let amp: f64 = cos_coeffs.iter().chain(sin_coeffs).map(|c| c.abs()).sum();
                r0_mm * (1.0 + amp)
            }
        }
    }

    /// True for families symmetric under point reflection about the natural
    /// center; their bounding box is centered on that point exactly.
    fn centrally_symmetric(&self) -> bool {
        !matches!(self, ContourFamily::Fourier { .. })
    }
}

/// Closed inner-edge curve of one eye frame, placed in its 3D plane.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameContour {
    family: ContourFamily,
    rotation_rad: f64,
    center_2d: Vector2<f64>,
    plane: FramePlane,
    boxing_center: Vector2<f64>,
    region_centroid: Vector2<f64>,
}

impl FrameContour {
    /// Validates family parameters and star-shapedness about the boxing
    /// center (3600-ray crossing check for asymmetric families; symmetric
    /// polar families are star-shaped about their center by construction).
    pub fn new(
        family: ContourFamily,
        rotation_rad: f64,
        center_2d: Vector2<f64>,
        plane: FramePlane,
    ) -> Result<Self, GeometryError> {
        family.validate()?;
        if !rotation_rad.is_finite() || !center_2d.x.is_finite() || !center_2d.y.is_finite() {
            return Err(GeometryError::InvalidContour("non-finite placement".into()));
        }
        let mut contour = Self {
            family,
            rotation_rad,
            center_2d,
            plane,
            boxing_center: center_2d,
            region_centroid: center_2d,
        };
        contour.boxing_center = contour.compute_boxing_center();
        contour.region_centroid = contour.compute_region_centroid();
        if !contour.family.centrally_symmetric() {
            for i in 0..STAR_CHECK_RAYS {
                let angle = 2.0 * std::f64::consts::PI * i as f64 / STAR_CHECK_RAYS as f64;
                let crossings = raycast::count_crossings(&contour, contour.boxing_center, angle);
                if crossings != 1 {
                    return Err(GeometryError::NotStarShaped { angle_rad: angle, crossings });
                }
            }
        }
        Ok(contour)
    }

    pub fn family(&self) -> &ContourFamily {
        &self.family
    }

    pub fn rotation_rad(&self) -> f64 {
        self.rotation_rad
    }

    pub fn plane(&self) -> &FramePlane {
        &self.plane
    }

    /// Natural center of the polar family, in plane coordinates.
    pub fn center_2d(&self) -> Vector2<f64> {
        self.center_2d
    }

    pub fn boxing_center(&self) -> Vector2<f64> {
        self.boxing_center
    }

    pub fn region_centroid(&self) -> Vector2<f64> {
        self.region_centroid
    }

    pub fn reference_center(&self, mode: CenterMode) -> Vector2<f64> {
        match mode {
            CenterMode::Boxing => self.boxing_center,
            CenterMode::Centroid => self.region_centroid,
        }
    }

    /// Polar radius about the natural center at in-plane angle `theta`
    /// (rotation applied).
    pub fn radius_about_center(&self, theta: f64) -> f64 {
        self.family.radius_at(theta - self.rotation_rad)
    }

    pub fn radius_bound(&self) -> f64 {
        self.family.radius_bound()
    }

    /// Signed residual of a plane point against the curve: negative inside,
    /// zero on the curve, positive outside.
    pub fn polar_residual(&self, p: Vector2<f64>) -> f64 {
        let d = p - self.center_2d;
        let rho = d.norm();
        let phi = d.y.atan2(d.x);
        rho - self.radius_about_center(phi)
    }

    /// Point on the curve at in-plane angle `theta` as seen from the natural
    /// center.
    pub fn point_at(&self, theta: f64) -> Vector2<f64> {
        let r = self.radius_about_center(theta);
        self.center_2d + Vector2::new(r * theta.cos(), r * theta.sin())
    }

    /// Analytic ground-truth trace: 600 ray-cast radii about the chosen
    /// reference center, angle 0 along the plane's +x.
    pub fn truth_trace(
        &self,
        eye: crate::trace::Eye,
        mode: CenterMode,
    ) -> Result<crate::trace::RadialTrace, GeometryError> {
        use crate::trace::{PointFlag, RadialTrace, TRACE_POINTS};
        let center = self.reference_center(mode);
        let mut radii = Vec::with_capacity(TRACE_POINTS);
        for i in 0..TRACE_POINTS {
            let angle = std::f64::consts::TAU * i as f64 / TRACE_POINTS as f64;
            radii.push(raycast::ray_cast_radius_from(self, center, angle)?);
        }
        RadialTrace::new(radii, 0.0, center, eye, vec![PointFlag::Measured; TRACE_POINTS])
            .map_err(|e| GeometryError::InvalidContour(e.to_string()))
    }

    fn compute_boxing_center(&self) -> Vector2<f64> {
        if self.family.centrally_symmetric() {
            return self.center_2d;
        }
        // Dense scan for each bounding-box side, then golden-section polish.
        let n = 1 << 15;
        let eval_u = |t: f64| self.point_at(t).x;
        let eval_v = |t: f64| self.point_at(t).y;
        let u_max = refine_extremum(&eval_u, n, 1.0);
        let u_min = refine_extremum(&eval_u, n, -1.0);
        let v_max = refine_extremum(&eval_v, n, 1.0);
        let v_min = refine_extremum(&eval_v, n, -1.0);
        Vector2::new((u_min + u_max) / 2.0, (v_min + v_max) / 2.0)
    }

    fn compute_region_centroid(&self) -> Vector2<f64> {
        // Polar integrals about the natural center; the trapezoid rule on a
        // periodic smooth integrand converges spectrally.
        let n = 1 << 14;
        let (mut a2, mut cx3, mut cy3) = (0.0f64, 0.0f64, 0.0f64);
        for i in 0..n {
            let theta = 2.0 * std::f64::consts::PI * i as f64 / n as f64;
            let r = self.radius_about_center(theta);
            let r2 = r * r;
            a2 += r2;
            cx3 += r2 * r * theta.cos();
            cy3 += r2 * r * theta.sin();
        }
        // common d-theta and 1/2, 1/3 factors
        let area2 = a2; // 2A / d-theta
        self.center_2d + Vector2::new(cx3, cy3) * (2.0 / 3.0) / area2
    }
}

/// Maximize `sign * f` over one period by dense scan + golden-section search;
/// returns the extremal value of `f`.
fn refine_extremum(f: &dyn Fn(f64) -> f64, n: usize, sign: f64) -> f64 {
    let tau = 2.0 * std::f64::consts::PI;
    let step = tau / n as f64;
    let mut best_i = 0usize;
    let mut best = f64::NEG_INFINITY;
    for i in 0..n {
        let v = sign * f(i as f64 * step);
        if v > best {
            best = v;
            best_i = i;
        }
    }
    let (mut lo, mut hi) = ((best_i as f64 - 1.0) * step, (best_i as f64 + 1.0) * step);
    let phi = (5.0f64.sqrt() - 1.0) / 2.0;
    let (mut x1, mut x2) = (hi - phi * (hi - lo), lo + phi * (hi - lo));
    let (mut f1, mut f2) = (sign * f(x1), sign * f(x2));
    while hi - lo > 1e-12 {
        if f1 < f2 {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + phi * (hi - lo);
            f2 = sign * f(x2);
        } else {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - phi * (hi - lo);
            f1 = sign * f(x1);
        }
    }
    f((lo + hi) / 2.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{Point3, Vector3};

    fn plane() -> FramePlane {
        FramePlane::from_origin_normal(Point3::origin(), Vector3::z()).unwrap()
    }

    fn circle(r: f64) -> FrameContour {
        FrameContour::new(
            ContourFamily::Circle { radius_mm: r },
            0.0,
            Vector2::zeros(),
            plane(),
        )
        .unwrap()
    }

    #[test]
    fn radius_bound_covers_the_superellipse_diagonal() {
        // at high exponents the diagonal radius exceeds both semi-axes, so
        // max(a, b) is not a bound; the rectangle corner is
        let (a, b) = (26.0, 20.0);
        for e in [2.0, 4.5, 12.0] {
            let family = ContourFamily::Superellipse { a_mm: a, b_mm: b, exponent: e };
            let bound = family.radius_bound();
            let mut worst = 0.0f64;
            for i in 0..3600 {
                let phi = 2.0 * std::f64::consts::PI * i as f64 / 3600.0;
                worst = worst.max(family.radius_at(phi));
            }
            assert!(worst <= bound, "e={e}: radius {worst} above bound {bound}");
            if e > 4.0 {
                assert!(worst > a.max(b), "e={e}: diagonal should exceed the semi-axes");
            }
        }
    }

    #[test]
    fn symmetric_families_box_on_their_center() {
        let c = circle(20.0);
        assert_eq!(c.boxing_center(), Vector2::zeros());
        let e = FrameContour::new(
            ContourFamily::Ellipse { a_mm: 25.0, b_mm: 18.0 },
            0.7,
            Vector2::new(3.0, -2.0),
            plane(),
        )
        .unwrap();
        assert_eq!(e.boxing_center(), Vector2::new(3.0, -2.0));
        // centroid of a centrally symmetric region is its center too
        assert!((e.region_centroid() - Vector2::new(3.0, -2.0)).norm() < 1e-9);
    }

    #[test]
    fn fourier_first_harmonic_shifts_boxing_center() {
        // r = r0 (1 + a1 cos phi) is, to first order, a circle translated by
        // r0*a1 along +x; bounding box center moves accordingly.
        let r0 = 20.0;
        let a1 = 0.05;
        let f = FrameContour::new(
            ContourFamily::Fourier {
                r0_mm: r0,
                cos_coeffs: vec![a1],
                sin_coeffs: vec![],
            },
            0.0,
            Vector2::zeros(),
            plane(),
        )
        .unwrap();
        // exact bbox: u(theta) = r0 (1 + a1 cos t) cos t has max at t=0:
        // r0 (1+a1), min at t=pi: -r0 (1-a1)  =>  center = r0 a1.
        let bc = f.boxing_center();
        assert!((bc.x - r0 * a1).abs() < 1e-9, "bc {bc:?}");
        // v extremes are symmetric in this curve
        assert!(bc.y.abs() < 1e-9);
    }

    #[test]
    fn parameter_validation() {
        let p = plane();
        assert!(FrameContour::new(
            ContourFamily::Circle { radius_mm: 11.0 },
            0.0,
            Vector2::zeros(),
            p.clone()
        )
        .is_err());
        assert!(FrameContour::new(
            ContourFamily::Circle { radius_mm: 33.0 },
            0.0,
            Vector2::zeros(),
            p.clone()
        )
        .is_err());
        assert!(FrameContour::new(
            ContourFamily::Superellipse { a_mm: 25.0, b_mm: 18.0, exponent: 1.0 },
            0.0,
            Vector2::zeros(),
            p.clone()
        )
        .is_err());
        // amplitude above 10% of mean radius
        assert!(FrameContour::new(
            ContourFamily::Fourier {
                r0_mm: 20.0,
                cos_coeffs: vec![0.08],
                sin_coeffs: vec![0.08],
            },
            0.0,
            Vector2::zeros(),
            p.clone()
        )
        .is_err());
        // order above 8
        assert!(FrameContour::new(
            ContourFamily::Fourier {
                r0_mm: 20.0,
                cos_coeffs: vec![0.01; 9],
                sin_coeffs: vec![],
            },
            0.0,
            Vector2::zeros(),
            p
        )
        .is_err());
    }

    #[test]
    fn polar_residual_classifies_points() {
        let e = FrameContour::new(
            ContourFamily::Ellipse { a_mm: 25.0, b_mm: 18.0 },
            0.0,
            Vector2::new(1.0, 2.0),
            plane(),
        )
        .unwrap();
        assert!(e.polar_residual(Vector2::new(1.0, 2.0)) < 0.0);
        assert!(e.polar_residual(Vector2::new(26.5, 2.0)) > 0.0);
        let on_curve = e.point_at(1.234);
        assert!(e.polar_residual(on_curve).abs() < 1e-12);
    }

    #[test]
    fn centroid_of_offset_fourier_region_matches_polygon_oracle() {
        let f = FrameContour::new(
            ContourFamily::Fourier {
                r0_mm: 22.0,
                cos_coeffs: vec![0.03, 0.02],
                sin_coeffs: vec![0.0, 0.025],
            },
            0.3,
            Vector2::new(-4.0, 6.0),
            plane(),
        )
        .unwrap();
        // Shoelace centroid of a dense polygon approximation.
        let n = 200_000;
        let (mut a, mut cx, mut cy) = (0.0, 0.0, 0.0);
        let pts: Vec<Vector2<f64>> = (0..n)
            .map(|i| f.point_at(2.0 * std::f64::consts::PI * i as f64 / n as f64))
            .collect();
        for i in 0..n {
            let p = pts[i];
            let q = pts[(i + 1) % n];
            let w = p.x * q.y - q.x * p.y;
            a += w;
            cx += (p.x + q.x) * w;
            cy += (p.y + q.y) * w;
        }
        let oracle = Vector2::new(cx, cy) / (3.0 * a);
        assert!(
            (f.region_centroid() - oracle).norm() < 1e-7,
            "centroid {:?} oracle {:?}",
            f.region_centroid(),
            oracle
        );
    }
}
