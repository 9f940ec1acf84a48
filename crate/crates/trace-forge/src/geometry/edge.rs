//! Subpixel extraction of the aperture edge from a rim mask.
//!
//! The rim of a frame segments as an annulus: an outer silhouette boundary
//! and an inner boundary around the lens aperture. Edge points are midpoints
//! of 4-adjacent pixel pairs whose mask values differ (the binary
//! marching-squares crossing), so each carries about 0.29 px of quantization
//! noise along its normal. A point belongs to the inner boundary when its
//! mask-to-background direction points toward the mask centroid, which for an
//! annulus sits inside the aperture; this also discards artificial edges
//! where a mask is cut by the image border.

use nalgebra::Vector2;

use super::GeometryError;
use crate::raster::Mask;

const MIN_INNER_POINTS: usize = 8;
/// Minimum cosine between an edge normal and the direction to the aperture
/// center for the final inner classification. Axis-aligned discrete normals
/// deviate up to 45 deg from the true normal, plus some for non-circular
/// apertures; tangential artifacts (cut edges) sit near 90 deg.
const MIN_INWARD_COSINE: f64 = 0.35;

/// One subpixel point on the aperture boundary.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EdgePoint {
    /// Position in pixel coordinates (integer coordinates are pixel centers).
    pub pos: Vector2<f64>,
    /// Unit direction from the rim toward the aperture interior.
    pub toward_aperture: Vector2<f64>,
}

/// All inner-boundary points of one view.
#[derive(Debug, Clone, PartialEq)]
pub struct InnerEdge {
    pub points: Vec<EdgePoint>,
    /// Mean of the point positions; a first estimate of the projected
    /// aperture center.
    pub centroid: Vector2<f64>,
}

pub fn extract_inner_edge(mask: &Mask) -> Result<InnerEdge, GeometryError> {
    let (cx, cy) = mask
        .centroid()
        .ok_or_else(|| GeometryError::DegenerateGeometry("empty mask".into()))?;
    let mask_centroid = Vector2::new(cx, cy);

    let mut all = Vec::new();
    let at = |x: i64, y: i64| -> bool {
        x >= 0
            && y >= 0
            && x < mask.width as i64
            && y < mask.height as i64
            && mask.get(x as usize, y as usize)
    };
    for y in 0..mask.height as i64 {
        for x in -1..mask.width as i64 {
            let (a, b) = (at(x, y), at(x + 1, y));
            if a != b {
                let sign = if a { 1.0 } else { -1.0 };
                all.push(EdgePoint {
                    pos: Vector2::new(x as f64 + 0.5, y as f64),
                    toward_aperture: Vector2::new(sign, 0.0),
                });
            }
        }
    }
    for x in 0..mask.width as i64 {
        for y in -1..mask.height as i64 {
            let (a, b) = (at(x, y), at(x, y + 1));
            if a != b {
                let sign = if a { 1.0 } else { -1.0 };
                all.push(EdgePoint {
                    pos: Vector2::new(x as f64, y as f64 + 0.5),
                    toward_aperture: Vector2::new(0.0, sign),
                });
            }
        }
    }

    // Pass 1: rough split against the mask centroid. The centroid of a
    // partially visible annulus can sit well off the aperture center, so this
    // pass only exists to seed a better center estimate.
    let rough: Vec<&EdgePoint> = all
        .iter()
        .filter(|p| p.toward_aperture.dot(&(mask_centroid - p.pos)) > 0.0)
        .collect();
    if rough.len() < MIN_INNER_POINTS {
        return Err(GeometryError::DegenerateGeometry(format!(
            "no aperture boundary in mask ({} inner edge points)",
            rough.len()
        )));
    }
    let mut center = rough.iter().map(|p| p.pos).sum::<Vector2<f64>>() / rough.len() as f64;

    // Pass 2 (twice): keep points whose normal aligns with the direction to
    // the current aperture-center estimate; tangential cut artifacts do not.
    let mut points = Vec::new();
    for _ in 0..2 {
        points = all
            .iter()
            .filter(|p| {
                let to_center = center - p.pos;
                let n = to_center.norm();
                n > 1.0 && p.toward_aperture.dot(&to_center) / n > MIN_INWARD_COSINE
            })
            .cloned()
            .collect::<Vec<_>>();
        if points.len() < MIN_INNER_POINTS {
            return Err(GeometryError::DegenerateGeometry(format!(
                "no aperture boundary in mask ({} inner edge points)",
                points.len()
            )));
        }
        center = points.iter().map(|p| p.pos).sum::<Vector2<f64>>() / points.len() as f64;
    }
    Ok(InnerEdge { points, centroid: center })
}
