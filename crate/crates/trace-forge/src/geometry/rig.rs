//! Four-camera rig and its plain-text description format.
//!
//! Rig file grammar (one `key value...` pair per line, `#` comments and blank
//! lines ignored):
//!
//! ```text
//! rig v1
//! working_distance_mm 500
//! camera 0
//! image_size 1296 1296
//! focal_length_px 1400
//! principal_point 648 648
//! rotation r00 r01 r02 r10 r11 r12 r20 r21 r22
//! translation tx ty tz
//! crop_origin 410 520        # optional; present on all cameras or none
//! camera 1
//! ...
//! ```
//!
//! Units are millimetres for poses and pixels for intrinsics. Floats are
//! written in shortest round-trip form, so write -> parse -> write is
//! byte-identical.

use nalgebra::{Matrix3, Point3, Vector2, Vector3};

use super::camera::PinholeCamera;
use super::GeometryError;

const WD_MIN: f64 = 300.0;
const WD_MAX: f64 = 800.0;

/// Calibrated four-camera measurement head.
#[derive(Debug, Clone, PartialEq)]
pub struct CameraRig {
    cameras: [PinholeCamera; 4],
    working_distance_mm: f64,
}

impl CameraRig {
    pub fn new(cameras: [PinholeCamera; 4], working_distance_mm: f64) -> Result<Self, GeometryError> {
        if !(WD_MIN..=WD_MAX).contains(&working_distance_mm) {
            return Err(GeometryError::InvalidRig(format!(
                "working distance {working_distance_mm} mm outside [{WD_MIN}, {WD_MAX}]"
            )));
        }
        for i in 0..4 {
            for j in (i + 1)..4 {
                if cameras[i].rotation() == cameras[j].rotation()
                    && cameras[i].translation() == cameras[j].translation()
                {
                    return Err(GeometryError::InvalidRig(format!(
                        "cameras {i} and {j} share a pose"
                    )));
                }
            }
        }
        Ok(Self { cameras, working_distance_mm })
    }

    pub fn cameras(&self) -> &[PinholeCamera; 4] {
        &self.cameras
    }

    pub fn working_distance_mm(&self) -> f64 {
        self.working_distance_mm
    }

    /// Effective object-space resolution at the working distance.
    pub fn mm_per_px(&self) -> f64 {
        self.working_distance_mm / self.cameras[0].focal_length_px()
    }

    /// Index permutation that orders cameras by a stable pose key. Reductions
    /// over views walk cameras in this order so results do not depend on the
    /// order cameras were listed in.
    pub(crate) fn canonical_order(&self) -> [usize; 4] {
        let mut idx = [0usize, 1, 2, 3];
        idx.sort_by_key(|&i| self.cameras[i].canonical_key());
        idx
    }

    /// Standard tower rig: four cameras on yaw/pitch offsets from the subject
    /// axis, all aimed at `target`.
    pub fn tower(cfg: &TowerConfig) -> Result<Self, GeometryError> {
        let yaw = cfg.yaw_deg.to_radians();
        let pitch = cfg.pitch_deg.to_radians();
        let pp = Vector2::new(
            (cfg.image_size.0 as f64 - 1.0) / 2.0,
            (cfg.image_size.1 as f64 - 1.0) / 2.0,
        );
        let mut cams = Vec::with_capacity(4);
        for &(sy, sp) in &[(-1.0, -1.0), (-1.0, 1.0), (1.0, -1.0), (1.0, 1.0)] {
            let (y, p): (f64, f64) = (sy * yaw, sp * pitch);
            let dir = Vector3::new(y.sin() * p.cos(), p.sin(), y.cos() * p.cos());
            let center = cfg.target + dir * cfg.working_distance_mm;
            cams.push(PinholeCamera::look_at(
                cfg.focal_length_px,
                pp,
                cfg.image_size,
                center,
                cfg.target,
                Vector3::y(),
            )?);
        }
        let cameras: [PinholeCamera; 4] = cams.try_into().expect("four cameras");
        Self::new(cameras, cfg.working_distance_mm)
    }
}

/// Parameters for [`CameraRig::tower`].
#[derive(Debug, Clone)]
pub struct TowerConfig {
    pub image_size: (u32, u32),
    pub focal_length_px: f64,
    pub working_distance_mm: f64,
    pub target: Point3<f64>,
    pub yaw_deg: f64,
    pub pitch_deg: f64,
}

impl Default for TowerConfig {
    fn default() -> Self {
        Self {
            image_size: (1296, 1296),
            focal_length_px: 1400.0,
            working_distance_mm: 500.0,
            target: Point3::origin(),
            yaw_deg: 10.0,
            pitch_deg: 6.0,
        }
    }
}

/// Parsed rig file: the rig plus, when the masks it will be used with are
/// crops of the full sensor, the per-camera crop offsets.
#[derive(Debug, Clone, PartialEq)]
pub struct RigFile {
    pub rig: CameraRig,
    pub crop_origins: Option<[(u32, u32); 4]>,
}

#[derive(Default)]
struct CameraDraft {
    image_size: Option<(u32, u32)>,
    focal_length_px: Option<f64>,
    principal_point: Option<Vector2<f64>>,
    rotation: Option<Matrix3<f64>>,
    translation: Option<Vector3<f64>>,
    crop_origin: Option<(u32, u32)>,
}

impl CameraDraft {
    fn build(self, line: usize) -> Result<(PinholeCamera, Option<(u32, u32)>), GeometryError> {
        let missing = |what: &str| GeometryError::RigParse {
            line,
            msg: format!("camera block missing {what}"),
        };
        let cam = PinholeCamera::new(
            self.focal_length_px.ok_or_else(|| missing("focal_length_px"))?,
            self.principal_point.ok_or_else(|| missing("principal_point"))?,
            self.image_size.ok_or_else(|| missing("image_size"))?,
            self.rotation.ok_or_else(|| missing("rotation"))?,
            self.translation.ok_or_else(|| missing("translation"))?,
        )
        .map_err(|e| GeometryError::RigParse { line, msg: e.to_string() })?;
        Ok((cam, self.crop_origin))
    }
}

pub fn parse_rig_file(text: &str) -> Result<RigFile, GeometryError> {
    let err = |line: usize, msg: String| GeometryError::RigParse { line, msg };
    let mut wd: Option<f64> = None;
    let mut drafts: Vec<(usize, CameraDraft)> = Vec::new();
    let mut saw_header = false;

    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let mut parts = line.split_whitespace();
        let key = parts.next().unwrap();
        let rest: Vec<&str> = parts.collect();
        let floats = |n: usize| -> Result<Vec<f64>, GeometryError> {
            if rest.len() != n {
                return Err(err(line_no, format!("{key}: expected {n} values, got {}", rest.len())));
            }
            rest.iter()
                .map(|s| {
                    s.parse::<f64>()
                        .map_err(|_| err(line_no, format!("{key}: bad number {s:?}")))
                })
                .collect()
        };
        let ints = |n: usize| -> Result<Vec<u32>, GeometryError> {
            if rest.len() != n {
                return Err(err(line_no, format!("{key}: expected {n} values, got {}", rest.len())));
            }
            rest.iter()
                .map(|s| {
                    s.parse::<u32>()
                        .map_err(|_| err(line_no, format!("{key}: bad integer {s:?}")))
                })
                .collect()
        };

        match key {
            "rig" => {
                if rest != ["v1"] {
                    return Err(err(line_no, format!("unsupported rig version {rest:?}")));
                }
                saw_header = true;
            }
            "working_distance_mm" => wd = Some(floats(1)?[0]),
            "camera" => {
                let n = ints(1)?[0] as usize;
                if n != drafts.len() {
                    return Err(err(
                        line_no,
                        format!("camera blocks must be numbered in order; expected {} got {n}", drafts.len()),
                    ));
                }
                drafts.push((line_no, CameraDraft::default()));
            }
            _ => {
                let (_, draft) = drafts
                    .last_mut()
                    .ok_or_else(|| err(line_no, format!("{key} before any camera block")))?;
                match key {
                    "image_size" => {
                        let v = ints(2)?;
                        draft.image_size = Some((v[0], v[1]));
                    }
                    "focal_length_px" => draft.focal_length_px = Some(floats(1)?[0]),
                    "principal_point" => {
                        let v = floats(2)?;
                        draft.principal_point = Some(Vector2::new(v[0], v[1]));
                    }
                    "rotation" => {
                        let v = floats(9)?;
                        draft.rotation = Some(Matrix3::from_row_slice(&v));
                    }
                    "translation" => {
                        let v = floats(3)?;
                        draft.translation = Some(Vector3::new(v[0], v[1], v[2]));
                    }
                    "crop_origin" => {
                        let v = ints(2)?;
                        draft.crop_origin = Some((v[0], v[1]));
                    }
                    _ => return Err(err(line_no, format!("unknown key {key:?}"))),
                }
            }
        }
    }

    if !saw_header {
        return Err(err(1, "missing `rig v1` header".into()));
    }
    let wd = wd.ok_or_else(|| err(1, "missing working_distance_mm".into()))?;
    if drafts.len() != 4 {
        return Err(err(1, format!("expected 4 camera blocks, got {}", drafts.len())));
    }
    let mut cams = Vec::with_capacity(4);
    let mut crops = Vec::with_capacity(4);
    for (line, draft) in drafts {
        let (cam, crop) = draft.build(line)?;
        cams.push(cam);
        crops.push(crop);
    }
    let crop_origins = match crops.iter().filter(|c| c.is_some()).count() {
        0 => None,
        4 => Some([crops[0].unwrap(), crops[1].unwrap(), crops[2].unwrap(), crops[3].unwrap()]),
        n => {
            return Err(err(1, format!("crop_origin present on {n} of 4 cameras; must be all or none")))
        }
    };
    let cameras: [PinholeCamera; 4] = cams.try_into().expect("four cameras");
    let rig = CameraRig::new(cameras, wd).map_err(|e| err(1, e.to_string()))?;
    Ok(RigFile { rig, crop_origins })
}

pub fn write_rig_file(rig: &CameraRig, crop_origins: Option<&[(u32, u32); 4]>) -> String {
    use std::fmt::Write;
    let mut out = String::new();
    writeln!(out, "rig v1").unwrap();
    writeln!(out, "working_distance_mm {}", rig.working_distance_mm).unwrap();
    for (i, cam) in rig.cameras.iter().enumerate() {
        writeln!(out, "camera {i}").unwrap();
        let (w, h) = cam.image_size();
        writeln!(out, "image_size {w} {h}").unwrap();
        writeln!(out, "focal_length_px {}", cam.focal_length_px()).unwrap();
        let pp = cam.principal_point();
        writeln!(out, "principal_point {} {}", pp.x, pp.y).unwrap();
        let r = cam.rotation();
        write!(out, "rotation").unwrap();
        for row in 0..3 {
            for col in 0..3 {
                write!(out, " {}", r[(row, col)]).unwrap();
            }
        }
        writeln!(out).unwrap();
        let t = cam.translation();
        writeln!(out, "translation {} {} {}", t.x, t.y, t.z).unwrap();
        if let Some(crops) = crop_origins {
            writeln!(out, "crop_origin {} {}", crops[i].0, crops[i].1).unwrap();
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tower_cameras_all_aim_at_target() {
        let rig = CameraRig::tower(&TowerConfig::default()).unwrap();
        for cam in rig.cameras() {
            let px = cam.project(Point3::origin()).unwrap();
            assert!((px - cam.principal_point()).norm() < 1e-9);
            let d = (cam.center() - Point3::origin()).norm();
            assert!((d - 500.0).abs() < 1e-9);
        }
    }

    #[test]
    fn tower_poses_are_distinct() {
        let rig = CameraRig::tower(&TowerConfig::default()).unwrap();
        let order = rig.canonical_order();
        let mut sorted = order;
        sorted.sort_unstable();
        assert_eq!(sorted, [0, 1, 2, 3]);
    }

    #[test]
    fn working_distance_bounds_enforced() {
        let mut cfg = TowerConfig::default();
        cfg.working_distance_mm = 250.0;
        assert!(CameraRig::tower(&cfg).is_err());
        cfg.working_distance_mm = 801.0;
        assert!(CameraRig::tower(&cfg).is_err());
        cfg.working_distance_mm = 300.0;
        assert!(CameraRig::tower(&cfg).is_ok());
    }

    #[test]
    fn rig_file_round_trip_is_byte_identical() {
        let rig = CameraRig::tower(&TowerConfig::default()).unwrap();
        let crops = [(10u32, 20u32), (30, 40), (50, 60), (70, 80)];
        let text = write_rig_file(&rig, Some(&crops));
        let parsed = parse_rig_file(&text).unwrap();
        assert_eq!(parsed.rig, rig);
        assert_eq!(parsed.crop_origins, Some(crops));
        let text2 = write_rig_file(&parsed.rig, parsed.crop_origins.as_ref());
        assert_eq!(text, text2);

        let bare = write_rig_file(&rig, None);
        let parsed2 = parse_rig_file(&bare).unwrap();
        assert_eq!(parsed2.crop_origins, None);
        assert_eq!(write_rig_file(&parsed2.rig, None), bare);
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let text = "rig v1\nworking_distance_mm 500\ncamera 0\nfocal_length_px oats\n";
        match parse_rig_file(text) {
            Err(GeometryError::RigParse { line, .. }) => assert_eq!(line, 4),
            other => panic!("expected parse error, got {other:?}"),
        }
        assert!(parse_rig_file("").is_err());
        // partial crop_origin coverage
        let rig = CameraRig::tower(&TowerConfig::default()).unwrap();
        let mut text = write_rig_file(&rig, None);
        text.push_str("crop_origin 1 2\n");
        assert!(parse_rig_file(&text).is_err());
    }
}
