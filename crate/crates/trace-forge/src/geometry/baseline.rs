//! Classical multi-view trace estimator.
//!
//! Works purely from the four rim masks and the calibrated rig, with no
//! learned parts: extract subpixel inner-edge points per view, fit the frame
//! plane to triangulated cross-view correspondences, then measure radii by
//! casting planar rays and intersecting each view's backprojected edge
//! crossing with the plane. Serves as the non-learned baseline and as an
//! independent oracle for the synthetic pipeline.
//!
//! All reductions walk the views in a canonical pose order, so the output is
//! bit-identical under any permutation of the input cameras.

use nalgebra::{DMatrix, DVector, Matrix3, Point3, Unit, Vector2, Vector3};

use super::edge::{extract_inner_edge, InnerEdge};
use super::{CameraRig, FramePlane, GeometryError, PinholeCamera};
use crate::contour::CenterMode;
use crate::raster::Mask;
use crate::trace::{Eye, PointFlag, RadialTrace, TRACE_POINTS};

/// Quality summary of a plane fit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlaneFitReport {
    /// RMS out-of-plane distance of the triangulated edge points.
    pub rms_mm: f64,
    /// Number of triangulated edge correspondences used.
    pub n_points: usize,
}

#[derive(Debug, Clone)]
pub struct GeometricTraceOptions {
    /// Trace length; the interchange format fixes this at 600.
    pub n_points: usize,
    pub center_mode: CenterMode,
    pub eye: Eye,
    /// Number of correspondence angles used while fitting the plane.
    pub fit_angles: usize,
}

impl Default for GeometricTraceOptions {
    fn default() -> Self {
        Self {
            n_points: TRACE_POINTS,
            center_mode: CenterMode::Boxing,
            eye: Eye::Right,
            fit_angles: 120,
        }
    }
}

/// Least-squares plane through triangulated mask-centroid and edge
/// correspondences across the four views.
pub fn fit_frame_plane(
    masks: &[Mask; 4],
    rig: &CameraRig,
) -> Result<(FramePlane, PlaneFitReport), GeometryError> {
    let ctx = FitContext::build(masks, rig, 120)?;
    Ok((ctx.plane, ctx.report))
}

/// Full classical measurement: plane fit, per-angle multi-view radii with
/// unweighted averaging, iterated re-centering on the chosen reference
/// center, and circular interpolation across occluded angles.
pub fn geometric_trace(
    masks: &[Mask; 4],
    rig: &CameraRig,
    opts: &GeometricTraceOptions,
) -> Result<RadialTrace, GeometryError> {
    if opts.n_points != TRACE_POINTS {
        return Err(GeometryError::DegenerateGeometry(format!(
            "trace length is fixed at {TRACE_POINTS} by the interchange format (asked for {})",
            opts.n_points
        )));
    }
    let ctx = FitContext::build(masks, rig, opts.fit_angles)?;
    let plane = &ctx.plane;

    let mut center = Vector2::zeros();
    let mut radii = ctx.measure_radii(center, TRACE_POINTS)?;
    for _ in 0..4 {
        let new_center = derive_center(&radii, center, opts.center_mode);
        if (new_center - center).norm() < 5e-4 {
            break;
        }
        center = new_center;
        radii = ctx.measure_radii(center, TRACE_POINTS)?;
    }

    let measured = radii.iter().filter(|r| r.is_some()).count();
    if measured < TRACE_POINTS / 4 {
        return Err(GeometryError::DegenerateGeometry(format!(
            "only {measured} of {TRACE_POINTS} angles measurable"
        )));
    }
    let (filled, flags) = fill_occlusions(&radii);
    RadialTrace::new(filled, 0.0, plane_center_2d(plane, center), opts.eye, flags)
        .map_err(|e| GeometryError::DegenerateGeometry(format!("measured trace invalid: {e}")))
}

/// Diagnostic companion to `geometric_trace`: how many views see a usable
/// inner-edge crossing at each of `n_angles` uniform plane angles. The
/// estimator needs at least two views per angle, so spans of 0/1 explain
/// degenerate or heavily interpolated results.
pub fn view_coverage(
    masks: &[Mask; 4],
    rig: &CameraRig,
    n_angles: usize,
) -> Result<Vec<u8>, GeometryError> {
    let ctx = FitContext::build(masks, rig, 120)?;
    ctx.coverage(n_angles)
}

/// The measurement center expressed in the plane's own coordinates is also
/// what the trace reports as its center.
fn plane_center_2d(_plane: &FramePlane, center: Vector2<f64>) -> Vector2<f64> {
    center
}

struct FitContext<'a> {
    cams: Vec<&'a PinholeCamera>,
    edges: Vec<InnerEdge>,
    plane: FramePlane,
    report: PlaneFitReport,
}

impl<'a> FitContext<'a> {
    fn build(masks: &'a [Mask; 4], rig: &'a CameraRig, fit_angles: usize) -> Result<Self, GeometryError> {
        for (i, cam) in rig.cameras().iter().enumerate() {
            let (w, h) = cam.image_size();
            if masks[i].width != w as usize || masks[i].height != h as usize {
                return Err(GeometryError::DegenerateGeometry(format!(
                    "mask {i} is {}x{} but camera {i} expects {w}x{h}",
                    masks[i].width, masks[i].height
                )));
            }
        }
        let order = rig.canonical_order();
        let cams: Vec<&PinholeCamera> = order.iter().map(|&i| &rig.cameras()[i]).collect();
        let edges = order
            .iter()
            .map(|&i| extract_inner_edge(&masks[i]))
            .collect::<Result<Vec<_>, _>>()?;

        // Initial center: intersect the rays through each view's edge centroid.
        let rays: Vec<(Point3<f64>, Unit<Vector3<f64>>)> =
            cams.iter().zip(&edges).map(|(c, e)| c.backproject_ray(e.centroid)).collect();
        let center0 = triangulate(&rays)?;

        // Initial plane: faces back toward the cameras.
        let mut toward = Vector3::zeros();
        for c in &cams {
            toward += (c.center() - center0).normalize();
        }
        let mut plane = FramePlane::from_origin_normal(center0, toward)?;

        let mut report = PlaneFitReport { rms_mm: f64::INFINITY, n_points: 0 };
        for _ in 0..3 {
            let mut points = Vec::with_capacity(fit_angles);
            let tables = self::tables_about(&self::project_center(&cams, &plane)?, &edges);
            for k in 0..fit_angles {
                let theta = std::f64::consts::TAU * k as f64 / fit_angles as f64;
                let mut point_rays = Vec::with_capacity(4);
                for (vi, cam) in cams.iter().enumerate() {
                    if let Some(px) = edge_crossing(cam, &plane, Vector2::zeros(), theta, &tables[vi]) {
                        point_rays.push(cam.backproject_ray(px));
                    }
                }
                if point_rays.len() >= 2 {
                    if let Ok(p) = triangulate(&point_rays) {
                        points.push(p);
                    }
                }
            }
            if points.len() < 8 {
                return Err(GeometryError::DegenerateGeometry(format!(
                    "only {} edge correspondences triangulated",
                    points.len()
                )));
            }
            let (origin, normal) = fit_plane_svd(&points, toward)?;
            plane = FramePlane::from_origin_normal(origin, normal.into_inner())?;
            let ss: f64 = points.iter().map(|p| plane.signed_distance(*p).powi(2)).sum();
            report = PlaneFitReport { rms_mm: (ss / points.len() as f64).sqrt(), n_points: points.len() };
        }

        Ok(Self { cams, edges, plane, report })
    }

    /// How many views contribute a usable edge crossing at each of `n`
    /// uniformly spaced plane angles about the initial center.
    fn coverage(&self, n: usize) -> Result<Vec<u8>, GeometryError> {
        let centers_px = project_center_at(&self.cams, &self.plane, Vector2::zeros())?;
        let tables = tables_about(&centers_px, &self.edges);
        let mut out = Vec::with_capacity(n);
        for j in 0..n {
            let theta = std::f64::consts::TAU * j as f64 / n as f64;
            let e2 = Vector2::new(theta.cos(), theta.sin());
            let mut count = 0u8;
            for (vi, cam) in self.cams.iter().enumerate() {
                let Some(px) = edge_crossing(cam, &self.plane, Vector2::zeros(), theta, &tables[vi])
                else {
                    continue;
                };
                let (o, d) = cam.backproject_ray(px);
                let Some(world) = self.plane.intersect_ray(o, d.into_inner()) else {
                    continue;
                };
                let r = (self.plane.to_plane(world)).dot(&e2);
                if r > 1.0 && r < 80.0 {
                    count += 1;
                }
            }
            out.push(count);
        }
        Ok(out)
    }

    /// Per-angle mean radius over the views that see the edge; `None` where
    /// fewer than two views do.
    fn measure_radii(&self, center: Vector2<f64>, n: usize) -> Result<Vec<Option<f64>>, GeometryError> {
        let centers_px = project_center_at(&self.cams, &self.plane, center)?;
        let tables = tables_about(&centers_px, &self.edges);
        let mut out = Vec::with_capacity(n);
        for j in 0..n {
            let theta = std::f64::consts::TAU * j as f64 / n as f64;
            let e2 = Vector2::new(theta.cos(), theta.sin());
            let mut sum = 0.0;
            let mut count = 0usize;
            for (vi, cam) in self.cams.iter().enumerate() {
                let Some(px) = edge_crossing(cam, &self.plane, center, theta, &tables[vi]) else {
                    continue;
                };
                let (o, d) = cam.backproject_ray(px);
                let Some(world) = self.plane.intersect_ray(o, d.into_inner()) else {
                    continue;
                };
                let w2 = self.plane.to_plane(world);
                let r = (w2 - center).dot(&e2);
                if r > 1.0 && r < 80.0 {
                    sum += r;
                    count += 1;
                }
            }
            out.push(if count >= 2 { Some(sum / count as f64) } else { None });
        }
        Ok(out)
    }
}

fn project_center(cams: &[&PinholeCamera], plane: &FramePlane) -> Result<Vec<Vector2<f64>>, GeometryError> {
    project_center_at(cams, plane, Vector2::zeros())
}

fn project_center_at(
    cams: &[&PinholeCamera],
    plane: &FramePlane,
    center: Vector2<f64>,
) -> Result<Vec<Vector2<f64>>, GeometryError> {
    let world = plane.to_world(center.x, center.y);
    cams.iter().map(|c| c.project(world)).collect()
}

/// Edge points of one view in polar form about the projected center, plus a
/// truncated Fourier model of rho(alpha) fitted to the whole view.
///
/// A global fit is essential near the axis-aligned tangent points of the
/// contour, where the quantization offsets of neighbouring edge samples are
/// perfectly correlated and no local window can average them away.
struct EdgeTable {
    entries: Vec<(f64, f64)>, // (alpha, rho) with alpha in [-pi, pi], sorted
    support_window: f64,
    gaps: Vec<(f64, f64)>, // angular spans without edge support
    coeffs: Vec<f64>,      // [c0, a1, b1, a2, b2, ..]
}

fn tables_about(centers_px: &[Vector2<f64>], edges: &[InnerEdge]) -> Vec<EdgeTable> {
    centers_px
        .iter()
        .zip(edges)
        .map(|(c, e)| {
            let mut entries: Vec<(f64, f64)> = e
                .points
                .iter()
                .map(|p| {
                    let d = p.pos - c;
                    (d.y.atan2(d.x), d.norm())
                })
                .collect();
            entries.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let mut rhos: Vec<f64> = entries.iter().map(|&(_, r)| r).collect();
            rhos.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let rho_med = rhos[rhos.len() / 2];
            let support_window = (4.0 / rho_med).clamp(0.01, 0.15);
            let gap_thresh = 3.0 * support_window;
            let mut gaps = Vec::new();
            for i in 0..entries.len() {
                let a0 = entries[i].0;
                let a1 = if i + 1 == entries.len() {
                    entries[0].0 + std::f64::consts::TAU
                } else {
                    entries[i + 1].0
                };
                if a1 - a0 > gap_thresh {
                    gaps.push((a0, a1));
                }
            }
            let coeffs = fit_fourier_radius(&entries);
            EdgeTable { entries, support_window, gaps, coeffs }
        })
        .collect()
}

/// Least-squares coefficients [c0, a1, b1, ..] of
/// rho(alpha) = c0 + sum_k (a_k cos k alpha + b_k sin k alpha).
fn fit_fourier_radius(entries: &[(f64, f64)]) -> Vec<f64> {
    let order = (entries.len() / 16).min(16);
    let p = 2 * order + 1;
    let mut basis = vec![0.0f64; p];
    let mut normal = DMatrix::<f64>::zeros(p, p);
    let mut rhs = DVector::<f64>::zeros(p);
    for &(alpha, rho) in entries {
        basis[0] = 1.0;
        for k in 1..=order {
            let ka = k as f64 * alpha;
            basis[2 * k - 1] = ka.cos();
            basis[2 * k] = ka.sin();
        }
        for i in 0..p {
            for j in i..p {
                normal[(i, j)] += basis[i] * basis[j];
            }
            rhs[i] += basis[i] * rho;
        }
    }
    for i in 0..p {
        for j in 0..i {
            normal[(i, j)] = normal[(j, i)];
        }
    }
    let mean = rhs[0] / entries.len().max(1) as f64;
    match normal.clone().cholesky() {
        Some(ch) => ch.solve(&rhs).iter().copied().collect(),
        None => match normal.lu().solve(&rhs) {
            Some(sol) => sol.iter().copied().collect(),
            None => {
                let mut c = vec![0.0; p];
                c[0] = mean;
                c
            }
        },
    }
}

impl EdgeTable {
    /// Edge distance along image angle `beta` from the fitted radius model.
    /// `None` unless actual edge samples flank the angle closely enough —
    /// occluded sectors must read as missing, not as an extrapolation.
    fn rho_at(&self, beta: f64) -> Option<f64> {
        // the fit rings near the boundary of its angular support, so stay a
        // guard band away from any gap
        let guard = 1.5 * self.support_window;
        for &(g0, g1) in &self.gaps {
            let span = (g1 - g0) + 2.0 * guard;
            let x = (beta - (g0 - guard)).rem_euclid(std::f64::consts::TAU);
            if x <= span {
                return None;
            }
        }
        let w = self.support_window;
        let (mut n_lo, mut n_hi) = (0usize, 0usize);
        for &(alpha, _) in &self.entries {
            let mut x = alpha - beta;
            while x > std::f64::consts::PI {
                x -= std::f64::consts::TAU;
            }
            while x < -std::f64::consts::PI {
                x += std::f64::consts::TAU;
            }
            if x.abs() <= w {
                if x < 0.0 {
                    n_lo += 1;
                } else {
                    n_hi += 1;
                }
            }
        }
        if n_lo + n_hi < 6 || n_lo == 0 || n_hi == 0 {
            return None;
        }
        let mut rho = self.coeffs[0];
        for k in 1..=(self.coeffs.len() - 1) / 2 {
            let kb = k as f64 * beta;
            rho += self.coeffs[2 * k - 1] * kb.cos() + self.coeffs[2 * k] * kb.sin();
        }
        (rho > 1.0).then_some(rho)
    }
}

/// Pixel position where the planar ray from `center` at angle `theta` meets
/// this view's inner edge.
fn edge_crossing(
    cam: &PinholeCamera,
    plane: &FramePlane,
    center: Vector2<f64>,
    theta: f64,
    table: &EdgeTable,
) -> Option<Vector2<f64>> {
    let p0 = plane.to_world(center.x, center.y);
    let p1 = plane.to_world(center.x + theta.cos(), center.y + theta.sin());
    let c_px = cam.project(p0).ok()?;
    let q_px = cam.project(p1).ok()?;
    let d = q_px - c_px;
    if d.norm() < 1e-9 {
        return None;
    }
    let dir = d / d.norm();
    let rho = table.rho_at(dir.y.atan2(dir.x))?;
    Some(c_px + dir * rho)
}

/// Point minimizing the summed squared distance to all rays.
fn triangulate(rays: &[(Point3<f64>, Unit<Vector3<f64>>)]) -> Result<Point3<f64>, GeometryError> {
    let mut a = Matrix3::zeros();
    let mut b = Vector3::zeros();
    for (o, d) in rays {
        let m = Matrix3::identity() - d.into_inner() * d.transpose();
        a += m;
        b += m * o.coords;
    }
    a.try_inverse()
        .map(|inv| Point3::from(inv * b))
        .ok_or_else(|| GeometryError::DegenerateGeometry("rays do not intersect (parallel bundle)".into()))
}

/// Total-least-squares plane: smallest principal axis of the point cloud.
fn fit_plane_svd(
    points: &[Point3<f64>],
    toward: Vector3<f64>,
) -> Result<(Point3<f64>, Unit<Vector3<f64>>), GeometryError> {
    let n = points.len() as f64;
    let mut centroid = Vector3::zeros();
    for p in points {
        centroid += p.coords;
    }
    centroid /= n;
    let mut cov = Matrix3::zeros();
    for p in points {
        let d = p.coords - centroid;
        cov += d * d.transpose();
    }
    let eig = cov.symmetric_eigen();
    let mut order = [0usize, 1, 2];
    order.sort_by(|&i, &j| eig.eigenvalues[i].partial_cmp(&eig.eigenvalues[j]).unwrap());
    let (lo, mid, hi) = (eig.eigenvalues[order[0]], eig.eigenvalues[order[1]], eig.eigenvalues[order[2]]);
    let _ = lo;
    if mid <= 1e-9 * hi.max(1.0) {
        return Err(GeometryError::DegenerateGeometry("triangulated points are collinear".into()));
    }
    let mut normal = eig.eigenvectors.column(order[0]).into_owned();
    if normal.dot(&toward) < 0.0 {
        normal = -normal;
    }
    Ok((Point3::from(centroid), Unit::new_normalize(normal)))
}

/// Bounding-box or region-centroid center of the measured polygon.
fn derive_center(radii: &[Option<f64>], center: Vector2<f64>, mode: CenterMode) -> Vector2<f64> {
    let n = radii.len();
    let pts: Vec<Vector2<f64>> = radii
        .iter()
        .enumerate()
        .filter_map(|(j, r)| {
            r.map(|r| {
                let theta = std::f64::consts::TAU * j as f64 / n as f64;
                center + Vector2::new(r * theta.cos(), r * theta.sin())
            })
        })
        .collect();
    match mode {
        CenterMode::Boxing => {
            let (mut umin, mut umax) = (f64::INFINITY, f64::NEG_INFINITY);
            let (mut vmin, mut vmax) = (f64::INFINITY, f64::NEG_INFINITY);
            for p in &pts {
                umin = umin.min(p.x);
                umax = umax.max(p.x);
                vmin = vmin.min(p.y);
                vmax = vmax.max(p.y);
            }
            Vector2::new((umin + umax) / 2.0, (vmin + vmax) / 2.0)
        }
        CenterMode::Centroid => {
            let (mut a, mut cx, mut cy) = (0.0, 0.0, 0.0);
            for i in 0..pts.len() {
                let p = pts[i];
                let q = pts[(i + 1) % pts.len()];
                let w = p.x * q.y - q.x * p.y;
                a += w;
                cx += (p.x + q.x) * w;
                cy += (p.y + q.y) * w;
            }
            if a.abs() < 1e-9 {
                center
            } else {
                Vector2::new(cx, cy) / (3.0 * a)
            }
        }
    }
}

/// Replace `None` radii by circular linear interpolation between the nearest
/// measured neighbors, marking them occluded.
fn fill_occlusions(radii: &[Option<f64>]) -> (Vec<f64>, Vec<PointFlag>) {
    let n = radii.len();
    let mut out = Vec::with_capacity(n);
    let mut flags = vec![PointFlag::Measured; n];
    for j in 0..n {
        match radii[j] {
            Some(r) => out.push(r),
            None => {
                flags[j] = PointFlag::OccludedAngle;
                let mut before = None;
                for step in 1..n {
                    let k = (j + n - step) % n;
                    if let Some(r) = radii[k] {
                        before = Some((step, r));
                        break;
                    }
                }
                let mut after = None;
                for step in 1..n {
                    let k = (j + step) % n;
                    if let Some(r) = radii[k] {
                        after = Some((step, r));
                        break;
                    }
                }
                let (sb, rb) = before.expect("at least one measured radius");
                let (sa, ra) = after.expect("at least one measured radius");
                let t = sb as f64 / (sb + sa) as f64;
                out.push(rb + (ra - rb) * t);
            }
        }
    }
    (out, flags)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::contour::{ContourFamily, FrameContour};
    use crate::geometry::rig::TowerConfig;

    /// Small bench-top rig: one eye fills most of a 256 px view at
    /// 0.25 mm/px effective resolution.
    fn bench_rig() -> CameraRig {
        CameraRig::tower(&TowerConfig {
            image_size: (256, 256),
            focal_length_px: 2000.0,
            working_distance_mm: 500.0,
            ..TowerConfig::default()
        })
        .unwrap()
    }

    fn frontal_plane() -> FramePlane {
        FramePlane::from_origin_normal(Point3::origin(), Vector3::z()).unwrap()
    }

    /// Rasterize the rim annulus of a contour into each view, independently
    /// of the production renderer: per pixel, intersect the backprojected ray
    /// with the true plane and apply the polar rim test. `blanked` removes a
    /// plane-angle wedge from a view, simulating occlusion.
    fn render_masks(
        contour: &FrameContour,
        rig: &CameraRig,
        rim_mm: f64,
        blanked: &[(usize, f64, f64)],
    ) -> [Mask; 4] {
        let mut out = Vec::new();
        for (vi, cam) in rig.cameras().iter().enumerate() {
            let (w, h) = cam.image_size();
            let mut m = Mask::zeros(w as usize, h as usize);
            for y in 0..h as usize {
                for x in 0..w as usize {
                    let (o, d) = cam.backproject_ray(Vector2::new(x as f64, y as f64));
                    let Some(world) = contour.plane().intersect_ray(o, d.into_inner()) else {
                        continue;
                    };
                    let p2 = contour.plane().to_plane(world);
                    let res = contour.polar_residual(p2);
                    if res < 0.0 || res > rim_mm {
                        continue;
                    }
                    let rel = p2 - contour.center_2d();
                    let theta = rel.y.atan2(rel.x);
                    let hidden = blanked.iter().any(|&(bv, lo, hi)| bv == vi && theta >= lo && theta <= hi);
                    if !hidden {
                        m.set(x, y, true);
                    }
                }
            }
            out.push(m);
        }
        out.try_into().unwrap()
    }

    #[test]
    fn plane_fit_recovers_frontal_plane() {
        let contour = FrameContour::new(
            ContourFamily::Circle { radius_mm: 20.0 },
            0.0,
            Vector2::zeros(),
            frontal_plane(),
        )
        .unwrap();
        let rig = bench_rig();
        let masks = render_masks(&contour, &rig, 3.0, &[]);
        let (plane, report) = fit_frame_plane(&masks, &rig).unwrap();
        let tilt = plane.normal().dot(&Vector3::z()).clamp(-1.0, 1.0).acos().to_degrees();
        assert!(tilt < 0.5, "plane tilt {tilt} deg");
        let depth_err = plane.signed_distance(Point3::origin()).abs();
        assert!(depth_err < 0.5, "origin depth error {depth_err} mm");
        assert!(report.rms_mm < 0.5, "rms {} mm", report.rms_mm);
        assert!(report.n_points >= 100);
    }

    #[test]
    fn circle_trace_within_fifty_microns() {
        let contour = FrameContour::new(
            ContourFamily::Circle { radius_mm: 20.0 },
            0.0,
            Vector2::zeros(),
            frontal_plane(),
        )
        .unwrap();
        let rig = bench_rig();
        let masks = render_masks(&contour, &rig, 3.0, &[]);
        let trace = geometric_trace(&masks, &rig, &GeometricTraceOptions::default()).unwrap();
        let worst = trace
            .radii_mm()
            .iter()
            .map(|r| (r - 20.0).abs())
            .fold(0.0f64, f64::max);
        assert!(worst < 0.05, "worst radius error {worst} mm");
        assert!(trace.flags().iter().all(|&f| f == PointFlag::Measured));
    }

    #[test]
    fn superellipse_trace_matches_ground_truth() {
        let contour = FrameContour::new(
            ContourFamily::Superellipse { a_mm: 25.0, b_mm: 18.0, exponent: 4.0 },
            0.15,
            Vector2::new(2.0, -1.0),
            frontal_plane(),
        )
        .unwrap();
        let rig = bench_rig();
        let masks = render_masks(&contour, &rig, 3.0, &[]);
        let trace = geometric_trace(&masks, &rig, &GeometricTraceOptions::default()).unwrap();
        let truth = contour.truth_trace(Eye::Right, CenterMode::Boxing).unwrap();
        let report = crate::trace::trace_error(&trace, &truth).unwrap();
        assert!(report.mean_mm < 0.1, "mean error {} mm", report.mean_mm);
    }

    #[test]
    fn camera_permutation_leaves_result_bit_identical() {
        let contour = FrameContour::new(
            ContourFamily::Ellipse { a_mm: 24.0, b_mm: 19.0 },
            0.4,
            Vector2::new(1.0, 1.5),
            frontal_plane(),
        )
        .unwrap();
        let rig = bench_rig();
        let masks = render_masks(&contour, &rig, 3.0, &[]);
        let base = geometric_trace(&masks, &rig, &GeometricTraceOptions::default()).unwrap();

        let perm = [2usize, 0, 3, 1];
        let cams = rig.cameras();
        let shuffled_rig = CameraRig::new(
            [cams[perm[0]].clone(), cams[perm[1]].clone(), cams[perm[2]].clone(), cams[perm[3]].clone()],
            rig.working_distance_mm(),
        )
        .unwrap();
        let shuffled_masks = [
            masks[perm[0]].clone(),
            masks[perm[1]].clone(),
            masks[perm[2]].clone(),
            masks[perm[3]].clone(),
        ];
        let other = geometric_trace(&shuffled_masks, &shuffled_rig, &GeometricTraceOptions::default())
            .unwrap();
        for (a, b) in base.radii_mm().iter().zip(other.radii_mm()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        assert_eq!(base.center_2d(), other.center_2d());
    }

    #[test]
    fn sector_visible_in_one_view_is_flagged_occluded() {
        let contour = FrameContour::new(
            ContourFamily::Circle { radius_mm: 20.0 },
            0.0,
            Vector2::zeros(),
            frontal_plane(),
        )
        .unwrap();
        let rig = bench_rig();
        // hide the same sector in three of four views
        let wedge = (0.9f64, 1.4f64);
        let masks = render_masks(
            &contour,
            &rig,
            3.0,
            &[(0, wedge.0, wedge.1), (1, wedge.0, wedge.1), (2, wedge.0, wedge.1)],
        );
        let trace = geometric_trace(&masks, &rig, &GeometricTraceOptions::default()).unwrap();
        let occluded: Vec<usize> = trace
            .flags()
            .iter()
            .enumerate()
            .filter(|(_, &f)| f == PointFlag::OccludedAngle)
            .map(|(i, _)| i)
            .collect();
        assert!(!occluded.is_empty(), "expected occluded points");
        for &i in &occluded {
            let theta = trace.angle_of(i);
            assert!(
                theta > wedge.0 - 0.1 && theta < wedge.1 + 0.1,
                "occlusion flagged outside the hidden sector at angle {theta}"
            );
            // interpolated values stay near the true circle
            assert!((trace.radii_mm()[i] - 20.0).abs() < 0.2);
        }
        // points far from the wedge are unaffected
        for i in 0..TRACE_POINTS {
            let theta = trace.angle_of(i);
            if !(wedge.0 - 0.2..=wedge.1 + 0.2).contains(&theta) {
                assert_eq!(trace.flags()[i], PointFlag::Measured, "angle {theta}");
            }
        }
    }

    #[test]
    fn coverage_counts_views_and_drops_inside_a_hidden_wedge() {
        let contour = FrameContour::new(
            ContourFamily::Circle { radius_mm: 20.0 },
            0.0,
            Vector2::zeros(),
            frontal_plane(),
        )
        .unwrap();
        let rig = bench_rig();
        let full = render_masks(&contour, &rig, 3.0, &[]);
        let cov = view_coverage(&full, &rig, 120).unwrap();
        assert_eq!(cov.len(), 120);
        assert!(cov.iter().all(|&c| c >= 2), "min coverage {:?}", cov.iter().min());

        let wedge = (0.9f64, 1.4f64);
        let masked = render_masks(
            &contour,
            &rig,
            3.0,
            &[(0, wedge.0, wedge.1), (1, wedge.0, wedge.1), (2, wedge.0, wedge.1)],
        );
        let cov = view_coverage(&masked, &rig, 600).unwrap();
        let in_wedge = |j: usize| {
            let theta = std::f64::consts::TAU * j as f64 / 600.0;
            theta > wedge.0 + 0.1 && theta < wedge.1 - 0.1
        };
        assert!((0..600).filter(|&j| in_wedge(j)).all(|j| cov[j] <= 1));
        assert!((0..600).filter(|&j| !in_wedge(j)).filter(|&j| cov[j] >= 2).count() > 500);
    }

    #[test]
    fn empty_mask_is_degenerate() {
        let rig = bench_rig();
        let masks = [
            Mask::zeros(256, 256),
            Mask::zeros(256, 256),
            Mask::zeros(256, 256),
            Mask::zeros(256, 256),
        ];
        assert!(matches!(
            fit_frame_plane(&masks, &rig),
            Err(GeometryError::DegenerateGeometry(_))
        ));
    }
}
