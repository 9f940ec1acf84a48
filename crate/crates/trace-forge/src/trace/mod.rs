//! The radial trace data model: 600 radii at uniform angles about a center in
//! the frame plane, plus normalization, error metrics and the text format.

mod metrics;
mod normalize;
mod textio;

pub use metrics::{mask_iou, trace_error, TraceErrorReport};
pub use normalize::{fit_normalizer, TraceNormalizer};
pub use textio::{format_trace, parse_trace, read_trace, write_trace};

use nalgebra::Vector2;
use thiserror::Error;

/// Fixed number of trace points per eye frame.
pub const TRACE_POINTS: usize = 600;
/// Sanity upper bound on eyewear radii (exclusive), mm.
pub const RADIUS_MAX_MM: f64 = 100.0;

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("trace must have {TRACE_POINTS} radii, got {got}")]
    WrongLength { got: usize },
    #[error("radius at index {index} is not finite")]
    NonFiniteRadius { index: usize },
    #[error("radius {value} mm at index {index} outside (0, {RADIUS_MAX_MM})")]
    RadiusOutOfRange { index: usize, value: f64 },
    #[error("normalizer std is zero (<= 1e-6)")]
    ZeroStd,
    #[error("empty trace collection")]
    EmptyCollection,
    #[error("trace parse error at line {line}: {msg}")]
    ParseError { line: usize, msg: String },
    #[error("trace file has {got} radius lines, expected {TRACE_POINTS}")]
    CountMismatch { got: usize },
    #[error("angle conventions differ: {a} vs {b} rad")]
    AngleMismatch { a: f64, b: f64 },
    #[error("eyes differ")]
    EyeMismatch,
    #[error("mask shapes differ: {a_w}x{a_h} vs {b_w}x{b_h}")]
    ShapeMismatch { a_w: usize, a_h: usize, b_w: usize, b_h: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Eye {
    Left,
    Right,
}

impl Eye {
    pub fn as_str(self) -> &'static str {
        match self {
            Eye::Left => "left",
            Eye::Right => "right",
        }
    }
}

impl std::str::FromStr for Eye {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "left" => Ok(Eye::Left),
            "right" => Ok(Eye::Right),
            other => Err(format!("unknown eye {other:?}")),
        }
    }
}

/// Per-point quality marker.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PointFlag {
    #[default]
    Measured,
    /// Fewer than two views saw the edge here; the radius is interpolated.
    OccludedAngle,
    /// A predicted radius fell outside the valid range and was clamped.
    RangeViolation,
}

/// Closed frame trace: radius i is measured at angle
/// `angle0_rad + i * 2π/600`, counterclockwise, about `center_2d` in frame
/// plane coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct RadialTrace {
    radii_mm: Vec<f64>,
    angle0_rad: f64,
    center_2d: Vector2<f64>,
    eye: Eye,
    flags: Vec<PointFlag>,
}

impl RadialTrace {
    /// Validating constructor: exactly 600 finite radii in (0, 100) mm.
    pub fn new(
        radii_mm: Vec<f64>,
        angle0_rad: f64,
        center_2d: Vector2<f64>,
        eye: Eye,
        flags: Vec<PointFlag>,
    ) -> Result<Self, TraceError> {
        if radii_mm.len() != TRACE_POINTS {
            return Err(TraceError::WrongLength { got: radii_mm.len() });
        }
        if flags.len() != TRACE_POINTS {
            return Err(TraceError::WrongLength { got: flags.len() });
        }
        for (index, &r) in radii_mm.iter().enumerate() {
            if !r.is_finite() {
                return Err(TraceError::NonFiniteRadius { index });
            }
            if r <= 0.0 || r >= RADIUS_MAX_MM {
                return Err(TraceError::RadiusOutOfRange { index, value: r });
            }
        }
        Ok(Self { radii_mm, angle0_rad, center_2d, eye, flags })
    }

    /// Constructor for model output: out-of-range radii are clamped into the
    /// valid range and flagged instead of rejected.
    pub fn from_predicted(radii_mm: Vec<f64>, angle0_rad: f64, eye: Eye) -> Result<Self, TraceError> {
        if radii_mm.len() != TRACE_POINTS {
            return Err(TraceError::WrongLength { got: radii_mm.len() });
        }
        let mut flags = vec![PointFlag::Measured; TRACE_POINTS];
        let mut clamped = Vec::with_capacity(TRACE_POINTS);
        for (i, &r) in radii_mm.iter().enumerate() {
            let r = if r.is_finite() { r } else { 0.0 };
            if r < 0.01 || r > RADIUS_MAX_MM - 0.01 {
                flags[i] = PointFlag::RangeViolation;
                clamped.push(r.clamp(0.01, RADIUS_MAX_MM - 0.01));
            } else {
                clamped.push(r);
            }
        }
        Self::new(clamped, angle0_rad, Vector2::zeros(), eye, flags)
    }

    pub fn radii_mm(&self) -> &[f64] {
        &self.radii_mm
    }

    pub fn angle0_rad(&self) -> f64 {
        self.angle0_rad
    }

    pub fn center_2d(&self) -> Vector2<f64> {
        self.center_2d
    }

    pub fn eye(&self) -> Eye {
        self.eye
    }

    pub fn flags(&self) -> &[PointFlag] {
        &self.flags
    }

    /// Angle of point `i` in the frame plane.
    pub fn angle_of(&self, i: usize) -> f64 {
        self.angle0_rad + std::f64::consts::TAU * i as f64 / TRACE_POINTS as f64
    }

    /// Point `i` in frame plane coordinates (mm).
    pub fn point_2d(&self, i: usize) -> Vector2<f64> {
        let a = self.angle_of(i);
        self.center_2d + Vector2::new(self.radii_mm[i] * a.cos(), self.radii_mm[i] * a.sin())
    }
}
