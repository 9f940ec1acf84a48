//! Error metrics between traces, and the mask-overlap utility.

use super::{RadialTrace, TraceError};
use crate::raster::Mask;

/// Aggregate per-point radial error between a predicted and a true trace.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TraceErrorReport {
    pub min_mm: f64,
    pub max_mm: f64,
    pub mean_mm: f64,
    /// Median of per-point errors; for the even point count this is the
    /// midpoint average of the two central order statistics.
    pub median_mm: f64,
    /// Fraction of points with error strictly under 1 mm.
    pub frac_under_1mm: f64,
    pub per_point_abs_err: Vec<f64>,
}

pub fn trace_error(pred: &RadialTrace, truth: &RadialTrace) -> Result<TraceErrorReport, TraceError> {
    if pred.eye() != truth.eye() {
        return Err(TraceError::EyeMismatch);
    }
    if pred.angle0_rad() != truth.angle0_rad() {
        return Err(TraceError::AngleMismatch { a: pred.angle0_rad(), b: truth.angle0_rad() });
    }
    let errs: Vec<f64> = pred
        .radii_mm()
        .iter()
        .zip(truth.radii_mm())
        .map(|(p, t)| (p - t).abs())
        .collect();
    let n = errs.len() as f64;
    let mut min = f64::INFINITY;
    let mut max = f64::NEG_INFINITY;
    let mut sum = 0.0;
    let mut under = 0usize;
    for &e in &errs {
        min = min.min(e);
        max = max.max(e);
        sum += e;
        if e < 1.0 {
            under += 1;
        }
    }
    let mut sorted = errs.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mid = sorted.len() / 2;
    let median = (sorted[mid - 1] + sorted[mid]) / 2.0;
    Ok(TraceErrorReport {
        min_mm: min,
        max_mm: max,
        mean_mm: sum / n,
        median_mm: median,
        frac_under_1mm: under as f64 / n,
        per_point_abs_err: errs,
    })
}

/// Intersection over union of two equally sized binary masks. Both empty
/// counts as full agreement (1.0).
pub fn mask_iou(a: &Mask, b: &Mask) -> Result<f64, TraceError> {
    if a.width != b.width || a.height != b.height {
        return Err(TraceError::ShapeMismatch {
            a_w: a.width,
            a_h: a.height,
            b_w: b.width,
            b_h: b.height,
        });
    }
    let mut inter = 0usize;
    let mut union = 0usize;
    for (&x, &y) in a.data.iter().zip(&b.data) {
        let (x, y) = (x != 0, y != 0);
        inter += (x && y) as usize;
        union += (x || y) as usize;
    }
    if union == 0 {
        Ok(1.0)
    } else {
        Ok(inter as f64 / union as f64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::{Eye, PointFlag, TRACE_POINTS};
    use nalgebra::Vector2;
    use rand::{Rng, SeedableRng};

    fn trace(radii: Vec<f64>) -> RadialTrace {
        RadialTrace::new(
            radii,
            0.0,
            Vector2::zeros(),
            Eye::Right,
            vec![PointFlag::Measured; TRACE_POINTS],
        )
        .unwrap()
    }

    #[test]
    fn identical_traces_have_zero_error() {
        let t = trace(vec![21.5; TRACE_POINTS]);
        let r = trace_error(&t, &t).unwrap();
        assert_eq!(r.min_mm, 0.0);
        assert_eq!(r.max_mm, 0.0);
        assert_eq!(r.mean_mm, 0.0);
        assert_eq!(r.median_mm, 0.0);
        assert_eq!(r.frac_under_1mm, 1.0);
    }

    #[test]
    fn constant_offset_shows_up_in_every_aggregate() {
        let t = trace(vec![20.0; TRACE_POINTS]);
        let p = trace(vec![20.5; TRACE_POINTS]);
        let r = trace_error(&p, &t).unwrap();
        for v in [r.min_mm, r.max_mm, r.mean_mm, r.median_mm] {
            assert!((v - 0.5).abs() < 1e-12);
        }
        assert_eq!(r.frac_under_1mm, 1.0);
    }

    #[test]
    fn aggregates_match_sort_based_oracle() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let truth: Vec<f64> = (0..TRACE_POINTS).map(|_| rng.gen_range(15.0..28.0)).collect();
            let pred: Vec<f64> =
                truth.iter().map(|r| r + rng.gen_range(-2.0..2.0)).collect();
            let report = trace_error(&trace(pred.clone()), &trace(truth.clone())).unwrap();

            let mut errs: Vec<f64> =
                pred.iter().zip(&truth).map(|(p, t)| (p - t).abs()).collect();
            errs.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let min = errs[0];
            let max = *errs.last().unwrap();
            let mean = errs.iter().sum::<f64>() / errs.len() as f64;
            let median = (errs[299] + errs[300]) / 2.0;
            let under = errs.iter().filter(|&&e| e < 1.0).count();

            assert!((report.min_mm - min).abs() < 1e-12);
            assert!((report.max_mm - max).abs() < 1e-12);
            assert!((report.mean_mm - mean).abs() < 1e-12);
            assert!((report.median_mm - median).abs() < 1e-12);
            assert_eq!(report.frac_under_1mm, under as f64 / 600.0);
            assert!(report.min_mm <= report.median_mm && report.median_mm <= report.max_mm);
            assert!(report.min_mm <= report.mean_mm && report.mean_mm <= report.max_mm);
        }
    }

    #[test]
    fn eye_and_angle_mismatches_are_rejected() {
        let t = trace(vec![20.0; TRACE_POINTS]);
        let other = RadialTrace::new(
            vec![20.0; TRACE_POINTS],
            0.0,
            Vector2::zeros(),
            Eye::Left,
            vec![PointFlag::Measured; TRACE_POINTS],
        )
        .unwrap();
        assert!(matches!(trace_error(&other, &t), Err(TraceError::EyeMismatch)));
        let rotated = RadialTrace::new(
            vec![20.0; TRACE_POINTS],
            0.1,
            Vector2::zeros(),
            Eye::Right,
            vec![PointFlag::Measured; TRACE_POINTS],
        )
        .unwrap();
        assert!(matches!(trace_error(&rotated, &t), Err(TraceError::AngleMismatch { .. })));
    }

    #[test]
    fn iou_basics() {
        let mut a = Mask::zeros(8, 8);
        let mut b = Mask::zeros(8, 8);
        for y in 0..4 {
            for x in 0..4 {
                a.set(x, y, true);
                b.set(x, y + 2, true);
            }
        }
        // half-overlapping equal squares: |inter| = 8, |union| = 24
        let v = mask_iou(&a, &b).unwrap();
        assert!((v - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(mask_iou(&a, &b).unwrap(), mask_iou(&b, &a).unwrap());
        assert_eq!(mask_iou(&a, &a).unwrap(), 1.0);
        let empty = Mask::zeros(8, 8);
        assert_eq!(mask_iou(&empty, &empty).unwrap(), 1.0);
        let mut disjoint = Mask::zeros(8, 8);
        disjoint.set(7, 7, true);
        assert_eq!(mask_iou(&a, &disjoint).unwrap(), 0.0);
        assert!(mask_iou(&a, &Mask::zeros(4, 4)).is_err());
    }
}
