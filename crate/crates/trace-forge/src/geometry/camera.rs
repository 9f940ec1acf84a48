//! Distortion-free pinhole camera. Images are assumed rectified upstream, so
//! projection is the plain pinhole map.

use nalgebra::{Matrix3, Point3, Unit, Vector2, Vector3};

use super::GeometryError;

const ROT_TOL: f64 = 1e-9;

/// Calibrated pinhole camera with a world-to-camera rigid transform.
///
/// Conventions: camera +z looks forward, +x is image-right, +y is image-down,
/// so pixel coordinates are (u right, v down). Units are millimetres for the
/// pose and pixels for the intrinsics.
#[derive(Debug, Clone, PartialEq)]
pub struct PinholeCamera {
    focal_length_px: f64,
    principal_point: Vector2<f64>,
    image_size: (u32, u32),
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

impl PinholeCamera {
    /// Validates the pose (orthonormal rotation with determinant +1 within
    /// 1e-9), a positive focal length and a principal point inside the image.
    pub fn new(
        focal_length_px: f64,
        principal_point: Vector2<f64>,
        image_size: (u32, u32),
        rotation: Matrix3<f64>,
        translation: Vector3<f64>,
    ) -> Result<Self, GeometryError> {
        if !(focal_length_px > 0.0) {
            return Err(GeometryError::InvalidCamera(format!(
                "focal length must be positive, got {focal_length_px}"
            )));
        }
        if image_size.0 == 0 || image_size.1 == 0 {
            return Err(GeometryError::InvalidCamera("zero image size".into()));
        }
        let (w, h) = (image_size.0 as f64, image_size.1 as f64);
        if !(principal_point.x >= 0.0
            && principal_point.x < w
            && principal_point.y >= 0.0
            && principal_point.y < h)
        {
            return Err(GeometryError::InvalidCamera(format!(
                "principal point ({}, {}) outside image {}x{}",
                principal_point.x, principal_point.y, image_size.0, image_size.1
            )));
        }
        let rtr = rotation.transpose() * rotation;
        let dev = (rtr - Matrix3::identity()).norm();
        if dev > ROT_TOL {
            return Err(GeometryError::InvalidCamera(format!(
                "rotation is not orthonormal (|R'R - I| = {dev:.3e})"
            )));
        }
        let det = rotation.determinant();
        if (det - 1.0).abs() > ROT_TOL {
            return Err(GeometryError::InvalidCamera(format!(
                "rotation determinant is {det}, expected +1"
            )));
        }
        Ok(Self { focal_length_px, principal_point, image_size, rotation, translation })
    }

    /// Camera positioned at `center` looking at `target` with `up` giving the
    /// screen-up direction.
    pub fn look_at(
        focal_length_px: f64,
        principal_point: Vector2<f64>,
        image_size: (u32, u32),
        center: Point3<f64>,
        target: Point3<f64>,
        up: Vector3<f64>,
    ) -> Result<Self, GeometryError> {
        let forward = target - center;
        if forward.norm() < 1e-9 {
            return Err(GeometryError::InvalidCamera(
                "camera center and look-at target coincide".into(),
            ));
        }
        let f = forward.normalize();
        let right = f.cross(&up.normalize());
        if right.norm() < 1e-9 {
            return Err(GeometryError::InvalidCamera(
                "up direction parallel to viewing direction".into(),
            ));
        }
        let r = right.normalize();
        let down = f.cross(&r);
        let rotation = Matrix3::from_rows(&[r.transpose(), down.transpose(), f.transpose()]);
        let translation = -(rotation * center.coords);
        Self::new(focal_length_px, principal_point, image_size, rotation, translation)
    }

    pub fn focal_length_px(&self) -> f64 {
        self.focal_length_px
    }

    pub fn principal_point(&self) -> Vector2<f64> {
        self.principal_point
    }

    pub fn image_size(&self) -> (u32, u32) {
        self.image_size
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    /// Camera center in world coordinates.
    pub fn center(&self) -> Point3<f64> {
        Point3::from(-(self.rotation.transpose() * self.translation))
    }

    /// Viewing direction (camera +z) in world coordinates.
    pub fn viewing_dir(&self) -> Unit<Vector3<f64>> {
        Unit::new_normalize(self.rotation.transpose() * Vector3::z())
    }

    /// Pinhole projection of a world point. The result may fall outside the
    /// image bounds; callers check when that matters.
    pub fn project(&self, point_world: Point3<f64>) -> Result<Vector2<f64>, GeometryError> {
        let pc = self.rotation * point_world.coords + self.translation;
        if pc.z <= 0.0 {
            return Err(GeometryError::NonPositiveDepth { z: pc.z });
        }
        Ok(Vector2::new(
            self.focal_length_px * pc.x / pc.z + self.principal_point.x,
            self.focal_length_px * pc.y / pc.z + self.principal_point.y,
        ))
    }

    /// Depth (camera-frame z, mm) of a world point.
    pub fn depth_of(&self, point_world: Point3<f64>) -> f64 {
        (self.rotation * point_world.coords + self.translation).z
    }

    /// World-frame ray through a pixel: `(origin, direction)` with unit
    /// direction pointing away from the camera.
    pub fn backproject_ray(&self, pixel: Vector2<f64>) -> (Point3<f64>, Unit<Vector3<f64>>) {
        let dir_cam = Vector3::new(
            (pixel.x - self.principal_point.x) / self.focal_length_px,
            (pixel.y - self.principal_point.y) / self.focal_length_px,
            1.0,
        );
        let dir_world = self.rotation.transpose() * dir_cam;
        (self.center(), Unit::new_normalize(dir_world))
    }

    /// True when the pixel lies at least `margin` px inside the image bounds.
    pub fn contains_pixel(&self, pixel: Vector2<f64>, margin: f64) -> bool {
        pixel.x >= margin
            && pixel.y >= margin
            && pixel.x <= self.image_size.0 as f64 - 1.0 - margin
            && pixel.y <= self.image_size.1 as f64 - 1.0 - margin
    }

    /// Stable ordering key on the pose, used to canonicalize camera order so
    /// multi-view reductions are independent of input permutation.
    pub(crate) fn canonical_key(&self) -> [u64; 12] {
        let mut key = [0u64; 12];
        for (i, v) in self
            .translation
            .iter()
            .chain(self.rotation.iter())
            .enumerate()
        {
            // Order-preserving map from f64 to u64.
            let bits = v.to_bits();
            key[i] = if bits >> 63 == 0 { bits ^ (1 << 63) } else { !bits };
        }
        key
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Vector2;

    fn axis_camera() -> PinholeCamera {
        PinholeCamera::new(
            1000.0,
            Vector2::new(648.0, 648.0),
            (1296, 1296),
            Matrix3::identity(),
            Vector3::zeros(),
        )
        .unwrap()
    }

    #[test]
    fn optical_axis_point_maps_to_principal_point() {
        let cam = axis_camera();
        let px = cam.project(Point3::new(0.0, 0.0, 500.0)).unwrap();
        assert!((px - Vector2::new(648.0, 648.0)).norm() < 1e-12);
    }

    #[test]
    fn lateral_offset_scales_by_focal_over_depth() {
        let cam = axis_camera();
        // x f / z = 50 * 1000 / 500 = 100
        let px = cam.project(Point3::new(50.0, 0.0, 500.0)).unwrap();
        assert!((px - Vector2::new(748.0, 648.0)).norm() < 1e-12);
    }

    #[test]
    fn behind_camera_is_rejected() {
        let cam = axis_camera();
        assert!(matches!(
            cam.project(Point3::new(0.0, 0.0, -1.0)),
            Err(GeometryError::NonPositiveDepth { .. })
        ));
        assert!(matches!(
            cam.project(Point3::new(0.0, 0.0, 0.0)),
            Err(GeometryError::NonPositiveDepth { .. })
        ));
    }

    #[test]
    fn principal_point_backprojects_along_axis() {
        let cam = axis_camera();
        let (origin, dir) = cam.backproject_ray(Vector2::new(648.0, 648.0));
        assert!((origin - Point3::origin()).norm() < 1e-12);
        assert!((dir.into_inner() - Vector3::z()).norm() < 1e-12);
    }

    #[test]
    fn project_backproject_recovers_ray() {
        let cam = PinholeCamera::look_at(
            1400.0,
            Vector2::new(648.0, 648.0),
            (1296, 1296),
            Point3::new(90.0, -40.0, 480.0),
            Point3::new(0.0, 0.0, 0.0),
            Vector3::y(),
        )
        .unwrap();
        let p = Point3::new(12.0, -7.0, 3.0);
        let px = cam.project(p).unwrap();
        let (o, d) = cam.backproject_ray(px);
        // residual of p from the ray
        let v = p - o;
        let along = v.dot(&d);
        let residual = (v - d.into_inner() * along).norm();
        assert!(residual < 1e-6, "residual {residual}");
    }

    #[test]
    fn fifteen_degree_yaw_matches_hand_built_projection_matrix() {
        // Independent oracle: explicit K [R|t] assembled by hand.
        let yaw: f64 = 15.0_f64.to_radians();
        let center = Point3::new(500.0 * yaw.sin(), 0.0, 500.0 * yaw.cos());
        let cam = PinholeCamera::look_at(
            1400.0,
            Vector2::new(648.0, 648.0),
            (1296, 1296),
            center,
            Point3::origin(),
            Vector3::y(),
        )
        .unwrap();
        let p = Point3::new(14.0, -9.5, 0.25);
        let px = cam.project(p).unwrap();

        // By-hand: rotation rows are right/down/forward, t = -R c.
        let f = (Point3::origin() - center).normalize();
        let r = f.cross(&Vector3::y()).normalize();
        let dn = f.cross(&r);
        let pc = Vector3::new(
            r.dot(&(p - center)),
            dn.dot(&(p - center)),
            f.dot(&(p - center)),
        );
        let expected = Vector2::new(
            1400.0 * pc.x / pc.z + 648.0,
            1400.0 * pc.y / pc.z + 648.0,
        );
        assert!((px - expected).norm() < 1e-9, "px {px:?} expected {expected:?}");
    }

    #[test]
    fn invalid_parameters_are_rejected() {
        let bad_rot = Matrix3::from_diagonal_element(2.0);
        assert!(PinholeCamera::new(
            1000.0,
            Vector2::new(10.0, 10.0),
            (100, 100),
            bad_rot,
            Vector3::zeros()
        )
        .is_err());
        // reflection: determinant -1
        let mut refl = Matrix3::identity();
        refl[(0, 0)] = -1.0;
        assert!(PinholeCamera::new(
            1000.0,
            Vector2::new(10.0, 10.0),
            (100, 100),
            refl,
            Vector3::zeros()
        )
        .is_err());
        assert!(PinholeCamera::new(
            -5.0,
            Vector2::new(10.0, 10.0),
            (100, 100),
            Matrix3::identity(),
            Vector3::zeros()
        )
        .is_err());
        assert!(PinholeCamera::new(
            1000.0,
            Vector2::new(150.0, 10.0),
            (100, 100),
            Matrix3::identity(),
            Vector3::zeros()
        )
        .is_err());
    }
}
