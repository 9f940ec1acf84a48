//! Standard normalization of trace radii with training-set statistics.

use super::{RadialTrace, TraceError, TRACE_POINTS};

/// Affine map to zero mean / unit variance, fitted on training radii.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TraceNormalizer {
    pub mean_mm: f64,
    pub std_mm: f64,
}

impl TraceNormalizer {
    pub fn normalize(&self, trace: &RadialTrace) -> Result<Vec<f64>, TraceError> {
        self.normalize_slice(trace.radii_mm())
    }

    pub fn normalize_slice(&self, radii_mm: &[f64]) -> Result<Vec<f64>, TraceError> {
        if self.std_mm <= 1e-6 {
            return Err(TraceError::ZeroStd);
        }
        Ok(radii_mm.iter().map(|r| (r - self.mean_mm) / self.std_mm).collect())
    }

    pub fn denormalize(&self, values: &[f64]) -> Vec<f64> {
        values.iter().map(|v| v * self.std_mm + self.mean_mm).collect()
    }
}

/// Mean and population standard deviation over all radii of all traces.
pub fn fit_normalizer(traces: &[RadialTrace]) -> Result<TraceNormalizer, TraceError> {
    if traces.is_empty() {
        return Err(TraceError::EmptyCollection);
    }
    let n = (traces.len() * TRACE_POINTS) as f64;
    let mut sum = 0.0;
    for t in traces {
        for &r in t.radii_mm() {
            sum += r;
        }
    }
    let mean = sum / n;
    let mut ss = 0.0;
    for t in traces {
        for &r in t.radii_mm() {
            ss += (r - mean) * (r - mean);
        }
    }
    Ok(TraceNormalizer { mean_mm: mean, std_mm: (ss / n).sqrt() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::{Eye, PointFlag};
    use nalgebra::Vector2;
    use rand::{Rng, SeedableRng};

    fn constant(v: f64) -> RadialTrace {
        RadialTrace::new(
            vec![v; TRACE_POINTS],
            0.0,
            Vector2::zeros(),
            Eye::Right,
            vec![PointFlag::Measured; TRACE_POINTS],
        )
        .unwrap()
    }

    #[test]
    fn two_constant_traces_give_two_point_population_std() {
        let norm = fit_normalizer(&[constant(20.0), constant(24.0)]).unwrap();
        assert!((norm.mean_mm - 22.0).abs() < 1e-12);
        assert!((norm.std_mm - 2.0).abs() < 1e-12);
        // one-sigma value maps to 1.0
        let v = norm.normalize(&constant(24.0)).unwrap();
        assert!(v.iter().all(|&x| (x - 1.0).abs() < 1e-12));
        // values equal to the mean map to zero
        let z = norm.normalize(&constant(22.0)).unwrap();
        assert!(z.iter().all(|&x| x.abs() < 1e-15));
    }

    #[test]
    fn constant_collection_yields_zero_std() {
        let norm = fit_normalizer(&[constant(20.0)]).unwrap();
        assert!(matches!(norm.normalize(&constant(20.0)), Err(TraceError::ZeroStd)));
    }

    #[test]
    fn empty_collection_rejected() {
        assert!(matches!(fit_normalizer(&[]), Err(TraceError::EmptyCollection)));
    }

    #[test]
    fn round_trip_and_flat_array_oracle() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let traces: Vec<RadialTrace> = (0..100)
            .map(|_| {
                let radii: Vec<f64> = (0..TRACE_POINTS).map(|_| rng.gen_range(14.0..30.0)).collect();
                RadialTrace::new(
                    radii,
                    0.0,
                    Vector2::zeros(),
                    Eye::Left,
                    vec![PointFlag::Measured; TRACE_POINTS],
                )
                .unwrap()
            })
            .collect();
        let norm = fit_normalizer(&traces).unwrap();

        // independent oracle: flatten into one array, compute directly
        let flat: Vec<f64> = traces.iter().flat_map(|t| t.radii_mm().to_vec()).collect();
        let mean: f64 = flat.iter().sum::<f64>() / flat.len() as f64;
        let var: f64 = flat.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / flat.len() as f64;
        assert!((norm.mean_mm - mean).abs() < 1e-12);
        assert!((norm.std_mm - var.sqrt()).abs() < 1e-12);

        for t in &traces {
            let v = norm.normalize(t).unwrap();
            let back = norm.denormalize(&v);
            for (a, b) in back.iter().zip(t.radii_mm()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn normalize_is_affine() {
        let norm = TraceNormalizer { mean_mm: 21.0, std_mm: 3.0 };
        let a = constant(18.0);
        let b = constant(27.0);
        let alpha = 0.3;
        let mix: Vec<f64> = a
            .radii_mm()
            .iter()
            .zip(b.radii_mm())
            .map(|(x, y)| alpha * x + (1.0 - alpha) * y)
            .collect();
        let lhs = norm.normalize_slice(&mix).unwrap();
        let na = norm.normalize(&a).unwrap();
        let nb = norm.normalize(&b).unwrap();
        for i in 0..TRACE_POINTS {
            let rhs = alpha * na[i] + (1.0 - alpha) * nb[i];
            assert!((lhs[i] - rhs).abs() < 1e-12);
        }
    }
}
