//! Pinhole camera rig, projection/backprojection, polar ray casting on
//! contours, and the classical multi-view trace estimator used as a
//! non-learned baseline.

mod baseline;
mod camera;
mod edge;
mod plane;
pub(crate) mod raycast;
mod rig;

pub use baseline::{
    fit_frame_plane, geometric_trace, view_coverage, GeometricTraceOptions, PlaneFitReport,
};
pub use camera::PinholeCamera;
pub use edge::{extract_inner_edge, EdgePoint, InnerEdge};
pub use plane::FramePlane;
pub use raycast::{ray_cast_radius, ray_cast_radius_from};
pub use rig::{parse_rig_file, write_rig_file, CameraRig, RigFile, TowerConfig};

use thiserror::Error;

/// Errors raised by the geometry module.
#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("point has non-positive depth in camera frame (z = {z})")]
    NonPositiveDepth { z: f64 },
    #[error("invalid camera: {0}")]
    InvalidCamera(String),
    #[error("invalid rig: {0}")]
    InvalidRig(String),
    #[error("invalid frame plane: {0}")]
    InvalidPlane(String),
    #[error("invalid contour: {0}")]
    InvalidContour(String),
    #[error("contour is not star-shaped: ray at {angle_rad} rad crosses the curve {crossings} times")]
    NotStarShaped { angle_rad: f64, crossings: usize },
    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),
    #[error("rig file parse error at line {line}: {msg}")]
    RigParse { line: usize, msg: String },
}
