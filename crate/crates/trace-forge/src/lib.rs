//! trace-forge measures eyeglass-frame traces — 600 radii of the lens
//! aperture at uniform angles — from calibrated four-view captures.
//!
//! The crate provides the full bench: camera/rig geometry and a classical
//! multi-view estimator ([`geometry`]), parametric frame contours with
//! analytic ground truth ([`contour`]), the trace data model, metrics and
//! text format ([`trace`]), a synthetic dataset generator ([`synthgen`]), a
//! small multi-view regression network with four fusion strategies
//! ([`fusionnet`]), and an experiment harness ([`evalharness`]).

pub mod cli;
pub mod contour;
pub mod evalharness;
pub mod fusionnet;
pub mod geometry;
pub mod raster;
pub mod synthgen;
pub mod trace;
