//! Synthetic multi-view sample generation.
//!
//! Scenes are a pair of mirror-image eye apertures on a shared, mildly tilted
//! plane. Rendering is analytic (per-pixel region tests against the contour),
//! so ground-truth traces come from geometry and never depend on raster
//! resolution.

mod augment;
mod dataset;
mod render;

use nalgebra::{Point3, Vector2, Vector3};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::contour::{ContourFamily, FrameContour};
use crate::geometry::{FramePlane, GeometryError, RigFile, TowerConfig};
use crate::raster::{Mask, Raster8};
use crate::trace::{Eye, RadialTrace, TraceError};

pub use augment::{augment, AugmentationConfig};
pub use dataset::{
    build_dataset, load_manifest, load_sample, serialize_views, DatasetManifest, ManifestEntry,
    Split,
};
pub use render::{render_scene, render_views, split_eyes, FullCapture, FullView, RenderConfig};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("generation failed: {0}")]
    GenerationFailed(String),
    #[error("contour leaves the frustum of view {view}")]
    OutOfFrustum { view: usize },
    #[error("per-eye crops intersect in view {view}")]
    OverlapError { view: usize },
    #[error("{path}: {msg}")]
    Corrupt { path: String, msg: String },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Trace(#[from] TraceError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Knobs for scene sampling and the capture geometry.
#[derive(Debug, Clone)]
pub struct SceneConfig {
    /// Capture rig layout (full-frame, before per-eye cropping).
    pub tower: TowerConfig,
    /// Side of the square per-eye crop, px.
    pub crop_px: u32,
    pub eye_separation_mm: f64,
    pub semi_axis_range_mm: (f64, f64),
    pub rim_width_range_mm: (f64, f64),
    /// Sampling weights for circle / ellipse / superellipse / fourier.
    pub family_weights: [f64; 4],
    pub plane_tilt_max_deg: f64,
    pub center_jitter_mm: f64,
    /// Probability that a scene gets nose clutter touching the rim.
    pub nose_overlap_prob: f64,
    /// Image channels rendered: 1 (gray) or 3 (RGB).
    pub channels: usize,
}

impl Default for SceneConfig {
    /// Desk-scale default: 0.25 mm/px, 256 px crops.
    fn default() -> Self {
        SceneConfig {
            tower: TowerConfig {
                image_size: (640, 640),
                focal_length_px: 2000.0,
                ..TowerConfig::default()
            },
            crop_px: 256,
            eye_separation_mm: 84.0,
            semi_axis_range_mm: (14.0, 26.0),
            rim_width_range_mm: (2.0, 6.0),
            family_weights: [0.15, 0.30, 0.30, 0.25],
            plane_tilt_max_deg: 3.0,
            center_jitter_mm: 3.0,
            nose_overlap_prob: 0.35,
            channels: 3,
        }
    }
}

impl SceneConfig {
    /// Small capture for fast experiments: 0.5 mm/px, 128 px crops.
    pub fn compact() -> Self {
        SceneConfig {
            tower: TowerConfig {
                image_size: (352, 352),
                focal_length_px: 1000.0,
                ..TowerConfig::default()
            },
            crop_px: 128,
            semi_axis_range_mm: (14.0, 22.0),
            ..SceneConfig::default()
        }
    }

    /// Capture-faithful scale (1296 px, 0.357 mm/px); crops shrink to 224 px
    /// so the two eyes stay disjoint.
    pub fn full_scale() -> Self {
        SceneConfig { tower: TowerConfig::default(), crop_px: 224, ..SceneConfig::default() }
    }

    pub fn mm_per_px(&self) -> f64 {
        self.tower.working_distance_mm / self.tower.focal_length_px
    }
}

/// A sampled two-eye scene: mirror-image contours on one plane, plus the
/// appearance parameters the renderer needs.
#[derive(Debug, Clone)]
pub struct TwoEyeScene {
    pub left: FrameContour,
    pub right: FrameContour,
    pub rim_width_mm: f64,
    pub frame_color: [f64; 3],
    pub nose_overlap: bool,
    pub seed: u64,
}

/// SplitMix64 step; used to derive independent stream seeds.
pub(crate) fn mix_seed(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn sample_family(rng: &mut ChaCha8Rng, cfg: &SceneConfig) -> ContourFamily {
    let (lo, hi) = cfg.semi_axis_range_mm;
    let total: f64 = cfg.family_weights.iter().sum();
    let mut pick = rng.gen::<f64>() * total;
    let mut idx = 0;
    for (i, w) in cfg.family_weights.iter().enumerate() {
        if pick < *w {
            idx = i;
            break;
        }
        pick -= w;
        idx = i;
    }
    match idx {
        0 => ContourFamily::Circle { radius_mm: rng.gen_range(lo..lo + 0.7 * (hi - lo)) },
        1 => {
            let a = rng.gen_range(lo + 1.0..hi);
            let b = (a * rng.gen_range(0.62..0.95)).max(lo);
            ContourFamily::Ellipse { a_mm: a, b_mm: b }
        }
        2 => {
            let a = rng.gen_range(lo + 1.0..hi);
            let b = (a * rng.gen_range(0.62..0.95)).max(lo);
            ContourFamily::Superellipse { a_mm: a, b_mm: b, exponent: rng.gen_range(2.2..8.0) }
        }
        _ => {
            let r0 = rng.gen_range(lo + 1.0..hi - 1.0);
            let order = rng.gen_range(2..=6usize);
            let mut cos_coeffs: Vec<f64> = (0..order).map(|k| rng.gen_range(-1.0..1.0) / ((k + 1) * (k + 1)) as f64).collect();
            let mut sin_coeffs: Vec<f64> = (0..order).map(|k| rng.gen_range(-1.0..1.0) / ((k + 1) * (k + 1)) as f64).collect();
            let raw: f64 = cos_coeffs.iter().chain(&sin_coeffs).map(|c| c.abs()).sum();
            let target = rng.gen_range(0.02..0.09);
            let s = if raw > 0.0 { target / raw } else { 0.0 };
            cos_coeffs.iter_mut().chain(&mut sin_coeffs).for_each(|c| *c *= s);
            ContourFamily::Fourier { r0_mm: r0, cos_coeffs, sin_coeffs }
        }
    }
}

/// The same curve reflected about the vertical axis through its center:
/// negated sine terms, supplementary rotation, mirrored center.
fn mirror_family(f: &ContourFamily) -> ContourFamily {
    match f {
        ContourFamily::Fourier { r0_mm, cos_coeffs, sin_coeffs } => ContourFamily::Fourier {
            r0_mm: *r0_mm,
            cos_coeffs: cos_coeffs.clone(),
            sin_coeffs: sin_coeffs.iter().map(|b| -b).collect(),
        },
        other => other.clone(),
    }
}

fn sample_plane(rng: &mut ChaCha8Rng, cfg: &SceneConfig) -> Result<FramePlane, GeometryError> {
    let z = rng.gen_range(-5.0..5.0);
    let tilt = rng.gen_range(0.0..cfg.plane_tilt_max_deg).to_radians();
    let axis_angle = rng.gen_range(0.0..std::f64::consts::TAU);
    let normal = Vector3::new(
        tilt.sin() * axis_angle.cos(),
        tilt.sin() * axis_angle.sin(),
        tilt.cos(),
    );
    FramePlane::from_origin_normal(Point3::new(0.0, 0.0, z), normal)
}

/// One standalone contour near the rig target, on its own sampled plane.
/// Invalid candidates (non-star-shaped Fourier draws) are resampled.
pub fn sample_contour(cfg: &SceneConfig, seed: u64) -> Result<FrameContour, SynthError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let plane = sample_plane(&mut rng, cfg)?;
    for _ in 0..100 {
        let family = sample_family(&mut rng, cfg);
        let rotation = rng.gen_range(-0.35..0.35);
        let j = cfg.center_jitter_mm;
        let center = Vector2::new(rng.gen_range(-j..j), rng.gen_range(-j..j));
        if let Ok(c) = FrameContour::new(family, rotation, center, plane.clone()) {
            return Ok(c);
        }
    }
    Err(SynthError::GenerationFailed("100 candidate contours rejected".into()))
}

/// Two-eye scene: the right aperture is sampled, the left is its exact
/// mirror image; centers get independent jitter about ±separation/2.
pub fn sample_scene(cfg: &SceneConfig, seed: u64) -> Result<TwoEyeScene, SynthError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let plane = sample_plane(&mut rng, cfg)?;
    let half = cfg.eye_separation_mm / 2.0;
    let j = cfg.center_jitter_mm;
    let base_value: f64 = rng.gen_range(0.05..0.35);
    let frame_color = [(); 3].map(|_| (base_value * rng.gen_range(0.7..1.3)).clamp(0.02, 0.5));
    let rim_width_mm = rng.gen_range(cfg.rim_width_range_mm.0..cfg.rim_width_range_mm.1);
    let nose_overlap = rng.gen::<f64>() < cfg.nose_overlap_prob;
    for _ in 0..100 {
        let family = sample_family(&mut rng, cfg);
        let rotation: f64 = rng.gen_range(-0.35..0.35);
        let right_center = Vector2::new(half + rng.gen_range(-j..j), rng.gen_range(-j..j));
        let left_center = Vector2::new(-half + rng.gen_range(-j..j), rng.gen_range(-j..j));
        let mirrored = mirror_family(&family);
        let mirrored_rot = wrap_angle(std::f64::consts::PI - rotation);
        let right = FrameContour::new(family, rotation, right_center, plane.clone());
        let left = FrameContour::new(mirrored, mirrored_rot, left_center, plane.clone());
        if let (Ok(right), Ok(left)) = (right, left) {
            return Ok(TwoEyeScene { left, right, rim_width_mm, frame_color, nose_overlap, seed });
        }
    }
    Err(SynthError::GenerationFailed("100 candidate contours rejected".into()))
}

fn wrap_angle(a: f64) -> f64 {
    let mut a = a;
    while a > std::f64::consts::PI {
        a -= std::f64::consts::TAU;
    }
    while a <= -std::f64::consts::PI {
        a += std::f64::consts::TAU;
    }
    a
}

/// One view's channels as stored in a sample.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ViewData {
    pub image: Vec<Raster8>,
    pub depth: Raster8,
    pub mask: Mask,
}

/// Per-eye multi-view sample: four views, ground-truth trace, and the rig
/// (with crop origins) that produced it.
#[derive(Debug, Clone)]
pub struct MultiViewSample {
    pub views: [ViewData; 4],
    pub truth: RadialTrace,
    pub eye: Eye,
    pub sample_id: String,
    pub rng_seed: u64,
    pub rig: RigFile,
}

impl MultiViewSample {
    /// Checks the structural invariants: shared dimensions, depth strictly
    /// separating frame pixels from the rest, single-component mask.
    pub fn validate(&self) -> Result<(), SynthError> {
        let w = self.views[0].depth.width;
        let h = self.views[0].depth.height;
        for (vi, v) in self.views.iter().enumerate() {
            if v.depth.width != w
                || v.depth.height != h
                || v.mask.width != w
                || v.mask.height != h
                || v.image.iter().any(|p| p.width != w || p.height != h)
            {
                return Err(SynthError::GenerationFailed(format!(
                    "view {vi} dimensions disagree with view 0"
                )));
            }
            let mut min_on = u8::MAX;
            let mut max_off = 0u8;
            for i in 0..w * h {
                let d = v.depth.data[i];
                if v.mask.data[i] != 0 {
                    min_on = min_on.min(d);
                } else {
                    max_off = max_off.max(d);
                }
            }
            if v.mask.area() == 0 || min_on <= max_off {
                return Err(SynthError::GenerationFailed(format!(
                    "view {vi}: frame depth band ({min_on}..) does not sit above background (..{max_off})"
                )));
            }
            if !v.mask.is_single_component() {
                return Err(SynthError::GenerationFailed(format!(
                    "view {vi}: mask splits into multiple components"
                )));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::ray_cast_radius;
    use crate::trace::TRACE_POINTS;

    #[test]
    fn circle_contour_traces_constant_radius() {
        let cfg = SceneConfig { family_weights: [1.0, 0.0, 0.0, 0.0], ..SceneConfig::default() };
        let c = sample_contour(&cfg, 3).unwrap();
        let ContourFamily::Circle { radius_mm } = *c.family() else {
            panic!("expected a circle");
        };
        for k in 0..90 {
            let r = ray_cast_radius(&c, 0.07 * k as f64).unwrap();
            assert!((r - radius_mm).abs() < 1e-12);
        }
    }

    #[test]
    fn ellipse_trace_extremes_are_semi_axes() {
        let plane = FramePlane::from_origin_normal(Point3::origin(), Vector3::z()).unwrap();
        let c = FrameContour::new(
            ContourFamily::Ellipse { a_mm: 25.0, b_mm: 18.0 },
            0.0,
            Vector2::zeros(),
            plane,
        )
        .unwrap();
        let t = c.truth_trace(Eye::Right, crate::contour::CenterMode::Boxing).unwrap();
        let max = t.radii_mm().iter().cloned().fold(f64::MIN, f64::max);
        let min = t.radii_mm().iter().cloned().fold(f64::MAX, f64::min);
        assert!((max - 25.0).abs() < 1e-9);
        assert!((min - 18.0).abs() < 1e-9);
    }

    #[test]
    fn fourier_sampling_is_deterministic() {
        let cfg = SceneConfig { family_weights: [0.0, 0.0, 0.0, 1.0], ..SceneConfig::default() };
        let a = sample_contour(&cfg, 99).unwrap();
        let b = sample_contour(&cfg, 99).unwrap();
        assert_eq!(a.family(), b.family());
        assert_eq!(a.rotation_rad().to_bits(), b.rotation_rad().to_bits());
        assert_eq!(a.center_2d(), b.center_2d());
        let c = sample_contour(&cfg, 100).unwrap();
        assert_ne!(a.family(), c.family());
    }

    #[test]
    fn mirrored_scene_traces_reflect_each_other() {
        let cfg = SceneConfig::compact();
        for seed in [1u64, 5, 11] {
            let scene = sample_scene(&cfg, seed).unwrap();
            let lt = scene.left.truth_trace(Eye::Left, crate::contour::CenterMode::Boxing).unwrap();
            let rt = scene.right.truth_trace(Eye::Right, crate::contour::CenterMode::Boxing).unwrap();
            for i in 0..TRACE_POINTS {
                let j = (TRACE_POINTS + TRACE_POINTS / 2 - i) % TRACE_POINTS;
                assert!(
                    (lt.radii_mm()[i] - rt.radii_mm()[j]).abs() < 1e-9,
                    "seed {seed}: left[{i}] vs right[{j}]"
                );
            }
        }
    }

    #[test]
    fn generation_gives_up_after_bounded_attempts() {
        // an impossible axis range forces every candidate to fail validation
        let cfg = SceneConfig {
            semi_axis_range_mm: (40.0, 44.0),
            family_weights: [1.0, 0.0, 0.0, 0.0],
            ..SceneConfig::default()
        };
        match sample_contour(&cfg, 0) {
            Err(SynthError::GenerationFailed(msg)) => assert!(msg.contains("100")),
            other => panic!("expected GenerationFailed, got {other:?}"),
        }
    }
}
