//! The planar-frame assumption: eyeglass contours live on a 3D plane.

use nalgebra::{Point3, Unit, Vector2, Vector3};

use super::GeometryError;

const ORTHO_TOL: f64 = 1e-12;

/// Oriented plane with an in-plane 2D basis. `in_plane_x` fixes the direction
/// of plane angle zero; `in_plane_y = normal x in_plane_x` completes a
/// right-handed frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FramePlane {
    origin: Point3<f64>,
    normal: Unit<Vector3<f64>>,
    in_plane_x: Unit<Vector3<f64>>,
}

impl FramePlane {
    /// Build from raw vectors. `normal` must be unit length within 1e-12 and
    /// `in_plane_x` must be unit length and orthogonal to it within 1e-12.
    pub fn new(
        origin: Point3<f64>,
        normal: Vector3<f64>,
        in_plane_x: Vector3<f64>,
    ) -> Result<Self, GeometryError> {
        if (normal.norm() - 1.0).abs() > ORTHO_TOL {
            return Err(GeometryError::InvalidPlane(format!(
                "normal has norm {} (expected 1)",
                normal.norm()
            )));
        }
        if (in_plane_x.norm() - 1.0).abs() > ORTHO_TOL {
            return Err(GeometryError::InvalidPlane(format!(
                "in_plane_x has norm {} (expected 1)",
                in_plane_x.norm()
            )));
        }
        if normal.dot(&in_plane_x).abs() > ORTHO_TOL {
            return Err(GeometryError::InvalidPlane(format!(
                "in_plane_x is not orthogonal to normal (dot = {})",
                normal.dot(&in_plane_x)
            )));
        }
        Ok(Self {
            origin,
            normal: Unit::new_unchecked(normal),
            in_plane_x: Unit::new_unchecked(in_plane_x),
        })
    }

    /// Build with the canonical in-plane basis: `in_plane_x` is the projection
    /// of world +x onto the plane (falling back to +y when the normal is
    /// nearly parallel to +x). `normal` is normalized.
    pub fn from_origin_normal(
        origin: Point3<f64>,
        normal: Vector3<f64>,
    ) -> Result<Self, GeometryError> {
        let n = Unit::try_new(normal, 1e-12)
            .ok_or_else(|| GeometryError::InvalidPlane("zero normal".into()))?;
        let candidates = [Vector3::x(), Vector3::y()];
        for cand in candidates {
            let proj = cand - n.as_ref() * n.dot(&cand);
            if proj.norm() > 1e-6 {
                let x = Unit::new_normalize(proj);
                return Ok(Self { origin, normal: n, in_plane_x: x });
            }
        }
        Err(GeometryError::InvalidPlane(
            "normal parallel to both fallback axes".into(),
        ))
    }

    pub fn origin(&self) -> Point3<f64> {
        self.origin
    }

    pub fn normal(&self) -> Unit<Vector3<f64>> {
        self.normal
    }

    pub fn in_plane_x(&self) -> Unit<Vector3<f64>> {
        self.in_plane_x
    }

    pub fn in_plane_y(&self) -> Unit<Vector3<f64>> {
        Unit::new_unchecked(self.normal.cross(&self.in_plane_x))
    }

    /// 3D point of plane coordinates (u, v) in mm.
    pub fn to_world(&self, u: f64, v: f64) -> Point3<f64> {
        self.origin + self.in_plane_x.as_ref() * u + self.in_plane_y().as_ref() * v
    }

    /// Plane coordinates of a 3D point (its in-plane projection).
    pub fn to_plane(&self, p: Point3<f64>) -> Vector2<f64> {
        let d = p - self.origin;
        Vector2::new(d.dot(&self.in_plane_x), d.dot(&self.in_plane_y()))
    }

    /// Signed distance from a point to the plane, along the normal.
    pub fn signed_distance(&self, p: Point3<f64>) -> f64 {
        (p - self.origin).dot(&self.normal)
    }

    /// Intersect a ray with the plane. Returns the 3D hit point for t > 0, or
    /// `None` when the ray is parallel to the plane or points away from it.
    pub fn intersect_ray(
        &self,
        ray_origin: Point3<f64>,
        ray_dir: Vector3<f64>,
    ) -> Option<Point3<f64>> {
        let denom = self.normal.dot(&ray_dir);
        if denom.abs() < 1e-12 {
            return None;
        }
        let t = self.normal.dot(&(self.origin - ray_origin)) / denom;
        if t <= 0.0 {
            return None;
        }
        Some(ray_origin + ray_dir * t)
    }
}
