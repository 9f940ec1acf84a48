//! Analytic mask-first rendering: every pixel is classified by region tests
//! against the scene's contours, so masks and depth bands are exact and the
//! ground truth never depends on raster content.

use nalgebra::Vector2;

use super::{mix_seed, MultiViewSample, SceneConfig, SynthError, TwoEyeScene, ViewData};
use crate::contour::{CenterMode, FrameContour};
use crate::geometry::{CameraRig, FramePlane, PinholeCamera, RigFile};
use crate::raster::{Mask, Raster8};
use crate::trace::Eye;

/// Appearance knobs for a single render call.
#[derive(Debug, Clone)]
pub struct RenderConfig {
    pub rim_width_mm: f64,
    pub channels: usize,
    pub texture_seed: u64,
    /// Adds a nose-shaped clutter blob touching the inner rim edge.
    pub nose_overlap: bool,
    pub frame_color: [f64; 3],
    /// Which eye a single-contour render represents (sets the nose side).
    pub eye: Eye,
}

impl Default for RenderConfig {
    fn default() -> Self {
        RenderConfig {
            rim_width_mm: 3.0,
            channels: 3,
            texture_seed: 0,
            nose_overlap: false,
            frame_color: [0.12, 0.10, 0.11],
            eye: Eye::Right,
        }
    }
}

/// Full-frame render of a two-eye scene, one entry per camera.
#[derive(Debug, Clone)]
pub struct FullCapture {
    pub views: [FullView; 4],
}

#[derive(Debug, Clone)]
pub struct FullView {
    pub image: Vec<Raster8>,
    pub depth: Raster8,
    pub mask_left: Mask,
    pub mask_right: Mask,
}

// depth bands: frame pixels always sit strictly above everything else
const DEPTH_FRAME_HI: f64 = 250.0;
const DEPTH_FRAME_SPAN: f64 = 42.0;
const DEPTH_NOSE_LO: f64 = 127.0;
const DEPTH_NOSE_SPAN: f64 = 40.0;

fn hash01(seed: u64, xi: i64, yi: i64) -> f64 {
    let h = mix_seed(seed ^ (xi as u64).rotate_left(32), yi as u64);
    (h >> 11) as f64 / (1u64 << 53) as f64
}

fn smooth(t: f64) -> f64 {
    t * t * (3.0 - 2.0 * t)
}

/// Bilinear value noise on an integer lattice of the given pitch.
fn value_noise(seed: u64, x: f64, y: f64, pitch: f64) -> f64 {
    let gx = x / pitch;
    let gy = y / pitch;
    let x0 = gx.floor();
    let y0 = gy.floor();
    let tx = smooth(gx - x0);
    let ty = smooth(gy - y0);
    let (x0, y0) = (x0 as i64, y0 as i64);
    let v00 = hash01(seed, x0, y0);
    let v10 = hash01(seed, x0 + 1, y0);
    let v01 = hash01(seed, x0, y0 + 1);
    let v11 = hash01(seed, x0 + 1, y0 + 1);
    (v00 * (1.0 - tx) + v10 * tx) * (1.0 - ty) + (v01 * (1.0 - tx) + v11 * tx) * ty
}

fn fbm(seed: u64, x: f64, y: f64) -> f64 {
    0.55 * value_noise(seed, x, y, 26.0)
        + 0.30 * value_noise(seed ^ 0x9E37, x, y, 9.0)
        + 0.15 * value_noise(seed ^ 0x79B9, x, y, 3.2)
}

/// Soft vertically-elongated blob standing in for the wearer's nose,
/// in frame-plane millimetres.
#[derive(Debug, Clone, Copy)]
struct NoseBlob {
    center: Vector2<f64>,
    rx: f64,
    ry: f64,
}

impl NoseBlob {
    /// Normalized radial coordinate; < 1 inside the blob.
    fn shape(&self, p: Vector2<f64>) -> f64 {
        let dx = ((p.x - self.center.x) / self.rx).abs();
        let dy = ((p.y - self.center.y) / self.ry).abs();
        (dx.powf(2.2) + dy.powf(2.2)).powf(1.0 / 2.2)
    }
}

/// Everything the per-pixel shader needs, with contours listed left-to-right.
struct ShaderScene<'a> {
    contours: Vec<&'a FrameContour>,
    plane: &'a FramePlane,
    rim_mm: f64,
    frame_color: [f64; 3],
    nose: Option<NoseBlob>,
    seed: u64,
}

/// Blob placed against the nasal inner edge: between the eyes for a pair,
/// on the nose side for a single aperture.
fn nose_blob(contours: &[&FrameContour], single_eye: Eye) -> NoseBlob {
    const OVERLAP_MM: f64 = 4.0;
    if contours.len() == 2 {
        let left = contours[0];
        let right = contours[1];
        let le = left.center_2d().x + left.radius_about_center(0.0);
        let re = right.center_2d().x - right.radius_about_center(std::f64::consts::PI);
        let mid_y = (left.center_2d().y + right.center_2d().y) / 2.0;
        NoseBlob {
            center: Vector2::new((le + re) / 2.0, mid_y - 8.0),
            rx: (re - le) / 2.0 + OVERLAP_MM,
            ry: 19.0,
        }
    } else {
        let c = contours[0];
        // the nose sits toward the face midline: -x of a right eye
        let (dir, edge_angle) = match single_eye {
            Eye::Right => (-1.0, std::f64::consts::PI),
            Eye::Left => (1.0, 0.0),
        };
        let edge_x = c.center_2d().x + dir * c.radius_about_center(edge_angle);
        let rx = 11.0;
        NoseBlob {
            center: Vector2::new(edge_x + dir * (rx - OVERLAP_MM), c.center_2d().y - 8.0),
            rx,
            ry: 19.0,
        }
    }
}

struct PixelSample {
    rgb: [f64; 3],
    depth: u8,
    /// Index into `contours` when the pixel lies on that frame's rim.
    frame_of: Option<usize>,
}

fn shade_pixel(scene: &ShaderScene, cam: &PinholeCamera, x: usize, y: usize) -> PixelSample {
    let px = Vector2::new(x as f64, y as f64);
    let (o, d) = cam.backproject_ray(px);
    let Some(world) = scene.plane.intersect_ray(o, d.into_inner()) else {
        let n = fbm(scene.seed, x as f64, y as f64);
        return PixelSample {
            rgb: [0.3 * n + 0.2; 3],
            depth: (10.0 + 80.0 * n).round() as u8,
            frame_of: None,
        };
    };
    let p2 = scene.plane.to_plane(world);

    // region tests, strongest class first: rim > nose > aperture > background
    let mut aperture: Option<usize> = None;
    let mut rim: Option<(usize, f64)> = None;
    for (ci, c) in scene.contours.iter().enumerate() {
        let res = c.polar_residual(p2);
        if res >= 0.0 && res <= scene.rim_mm {
            rim = Some((ci, res));
            break;
        }
        if res < 0.0 {
            aperture = Some(ci);
        }
    }
    let nose = scene.nose.map(|b| b.shape(p2)).filter(|&s| s < 1.0);

    // skin-toned background with a soft brow shadow above each aperture
    let tex = fbm(scene.seed, p2.x * 3.1, p2.y * 3.1);
    let mut skin = [0.72, 0.55, 0.45].map(|c: f64| c * (0.78 + 0.30 * tex));
    for c in scene.contours.iter() {
        let top = c.center_2d().y + c.radius_about_center(std::f64::consts::FRAC_PI_2);
        let dy: f64 = p2.y - (top + 9.0);
        let dx = (p2.x - c.center_2d().x) / c.radius_about_center(0.0).max(1.0);
        if dx.abs() < 1.4 {
            let brow = 1.0 - 0.45 * (-(dy / 4.5).powi(2)).exp();
            skin = skin.map(|v| v * brow);
        }
    }

    if let Some((ci, res)) = rim {
        let profile = 0.55 + 0.50 * (std::f64::consts::PI * res / scene.rim_mm).sin();
        let rgb = scene.frame_color.map(|c| (c * profile + 0.04 * tex).clamp(0.0, 1.0));
        let depth = DEPTH_FRAME_HI - DEPTH_FRAME_SPAN * (res / scene.rim_mm) + 4.0 * tex;
        return PixelSample { rgb, depth: depth.round() as u8, frame_of: Some(ci) };
    }
    if let Some(s) = nose {
        let rgb = skin.map(|v| (v * 1.12 + 0.02).clamp(0.0, 1.0));
        let depth = DEPTH_NOSE_LO + DEPTH_NOSE_SPAN * (1.0 - s) + 5.0 * tex;
        return PixelSample { rgb, depth: depth.round() as u8, frame_of: None };
    }
    if let Some(ci) = aperture {
        let c = scene.contours[ci];
        let rel = p2 - c.center_2d();
        let streak = 0.16 * (-((rel.x - rel.y) / 7.0).powi(2)).exp();
        let rgb = [
            (skin[0] * 0.93 + streak).clamp(0.0, 1.0),
            (skin[1] * 0.93 + streak).clamp(0.0, 1.0),
            (skin[2] * 0.93 + 0.02 + streak).clamp(0.0, 1.0),
        ];
        let depth = 92.0 + 24.0 * tex;
        return PixelSample { rgb, depth: depth.round() as u8, frame_of: None };
    }
    let depth = 16.0 + 88.0 * fbm(scene.seed ^ 0xD1F4, p2.x * 3.1, p2.y * 3.1);
    PixelSample { rgb: skin, depth: depth.round() as u8, frame_of: None }
}

fn to_gray(rgb: [f64; 3]) -> f64 {
    0.299 * rgb[0] + 0.587 * rgb[1] + 0.114 * rgb[2]
}

fn quant(v: f64) -> u8 {
    (v * 255.0).round().clamp(0.0, 255.0) as u8
}

/// Renders one camera's view; returns image channels, depth, and one mask
/// per contour.
fn render_one_view(
    scene: &ShaderScene,
    cam: &PinholeCamera,
    channels: usize,
) -> (Vec<Raster8>, Raster8, Vec<Mask>) {
    let (w, h) = cam.image_size();
    let (w, h) = (w as usize, h as usize);
    let mut image = vec![Raster8::zeros(w, h); channels];
    let mut depth = Raster8::zeros(w, h);
    let mut masks = vec![Mask::zeros(w, h); scene.contours.len()];
    for y in 0..h {
        for x in 0..w {
            let px = shade_pixel(scene, cam, x, y);
            match channels {
                1 => image[0].set(x, y, quant(to_gray(px.rgb))),
                _ => {
                    for (c, plane) in image.iter_mut().enumerate() {
                        plane.set(x, y, quant(px.rgb[c]));
                    }
                }
            }
            depth.set(x, y, px.depth);
            if let Some(ci) = px.frame_of {
                masks[ci].set(x, y, true);
            }
        }
    }
    (image, depth, masks)
}

/// Errors with the first view whose frustum clips the rim's outer boundary.
fn check_frusta(
    contours: &[&FrameContour],
    rig: &CameraRig,
    rim_mm: f64,
) -> Result<(), SynthError> {
    for (vi, cam) in rig.cameras().iter().enumerate() {
        let (w, h) = cam.image_size();
        for c in contours {
            for k in 0..720 {
                let theta = std::f64::consts::TAU * k as f64 / 720.0;
                let r = c.radius_about_center(theta) + rim_mm;
                let p2 = c.center_2d() + r * Vector2::new(theta.cos(), theta.sin());
                let world = c.plane().to_world(p2.x, p2.y);
                let ok = cam
                    .project(world)
                    .map(|uv| {
                        uv.x >= 1.0 && uv.y >= 1.0 && uv.x <= (w - 2) as f64 && uv.y <= (h - 2) as f64
                    })
                    .unwrap_or(false);
                if !ok {
                    return Err(SynthError::OutOfFrustum { view: vi });
                }
            }
        }
    }
    Ok(())
}

/// Full-frame multi-view render of a single aperture; the sample's views are
/// rig-sized (no cropping).
pub fn render_views(
    contour: &FrameContour,
    rig: &CameraRig,
    cfg: &RenderConfig,
) -> Result<MultiViewSample, SynthError> {
    let contours = vec![contour];
    check_frusta(&contours, rig, cfg.rim_width_mm)?;
    let scene = ShaderScene {
        plane: contour.plane(),
        rim_mm: cfg.rim_width_mm,
        frame_color: cfg.frame_color,
        nose: cfg.nose_overlap.then(|| nose_blob(&contours, cfg.eye)),
        seed: cfg.texture_seed,
        contours,
    };
    let mut views = Vec::with_capacity(4);
    for cam in rig.cameras() {
        let (image, depth, mut masks) = render_one_view(&scene, cam, cfg.channels);
        views.push(ViewData { image, depth, mask: masks.pop().unwrap() });
    }
    let truth = contour.truth_trace(cfg.eye, CenterMode::Boxing)?;
    Ok(MultiViewSample {
        views: views.try_into().expect("four views"),
        truth,
        eye: cfg.eye,
        sample_id: "single".into(),
        rng_seed: cfg.texture_seed,
        rig: RigFile { rig: rig.clone(), crop_origins: None },
    })
}

/// Full-frame render of both eyes of a scene.
pub fn render_scene(
    scene: &TwoEyeScene,
    rig: &CameraRig,
    channels: usize,
) -> Result<FullCapture, SynthError> {
    let contours = vec![&scene.left, &scene.right];
    check_frusta(&contours, rig, scene.rim_width_mm)?;
    let shader = ShaderScene {
        plane: scene.left.plane(),
        rim_mm: scene.rim_width_mm,
        frame_color: scene.frame_color,
        nose: scene.nose_overlap.then(|| nose_blob(&contours, Eye::Right)),
        seed: mix_seed(scene.seed, 0x7E4D),
        contours,
    };
    let mut views = Vec::with_capacity(4);
    for cam in rig.cameras() {
        let (image, depth, mut masks) = render_one_view(&shader, cam, channels);
        let mask_right = masks.pop().unwrap();
        let mask_left = masks.pop().unwrap();
        views.push(FullView { image, depth, mask_left, mask_right });
    }
    Ok(FullCapture { views: views.try_into().expect("four views") })
}

fn crop_raster(src: &Raster8, ox: usize, oy: usize, side: usize) -> Raster8 {
    let mut out = Raster8::zeros(side, side);
    for y in 0..side {
        let srow = (oy + y) * src.width + ox;
        out.data[y * side..(y + 1) * side].copy_from_slice(&src.data[srow..srow + side]);
    }
    out
}

fn crop_mask(src: &Mask, ox: usize, oy: usize, side: usize) -> Mask {
    let mut out = Mask::zeros(side, side);
    for y in 0..side {
        let srow = (oy + y) * src.width + ox;
        out.data[y * side..(y + 1) * side].copy_from_slice(&src.data[srow..srow + side]);
    }
    out
}

/// Splits a two-eye capture into fixed-size per-eye samples. Each crop is
/// centered on its eye's projected center; crops must stay inside the
/// capture, keep an 8 px margin around the mask, and must not intersect.
pub fn split_eyes(
    capture: &FullCapture,
    scene: &TwoEyeScene,
    rig: &CameraRig,
    cfg: &SceneConfig,
    scene_id: &str,
) -> Result<(MultiViewSample, MultiViewSample), SynthError> {
    const MARGIN: usize = 8;
    let side = cfg.crop_px as usize;
    let plane = scene.left.plane();
    let mut origins = [[(0usize, 0usize); 4]; 2]; // [eye][view]
    for (vi, cam) in rig.cameras().iter().enumerate() {
        let (w, h) = cam.image_size();
        let mut rects = Vec::with_capacity(2);
        for (ei, contour) in [&scene.left, &scene.right].into_iter().enumerate() {
            let c = contour.center_2d();
            let uv = cam.project(plane.to_world(c.x, c.y))?;
            let ox = uv.x.round() as i64 - side as i64 / 2;
            let oy = uv.y.round() as i64 - side as i64 / 2;
            if ox < 0 || oy < 0 || ox + side as i64 > w as i64 || oy + side as i64 > h as i64 {
                return Err(SynthError::GenerationFailed(format!(
                    "view {vi}: crop at ({ox}, {oy}) leaves the capture"
                )));
            }
            let (ox, oy) = (ox as usize, oy as usize);
            let full_mask =
                if ei == 0 { &capture.views[vi].mask_left } else { &capture.views[vi].mask_right };
            let (x0, y0, x1, y1) = full_mask.bbox().ok_or_else(|| {
                SynthError::GenerationFailed(format!("view {vi}: empty eye mask"))
            })?;
            if x0 < ox + MARGIN || y0 < oy + MARGIN || x1 + MARGIN >= ox + side || y1 + MARGIN >= oy + side
            {
                return Err(SynthError::GenerationFailed(format!(
                    "view {vi}: mask misses the {MARGIN} px crop margin"
                )));
            }
            rects.push((ox, oy));
            origins[ei][vi] = (ox, oy);
        }
        let (lx, ly) = rects[0];
        let (rx, ry) = rects[1];
        if lx.abs_diff(rx) < side && ly.abs_diff(ry) < side {
            return Err(SynthError::OverlapError { view: vi });
        }
    }

    let mut samples = Vec::with_capacity(2);
    for (ei, (contour, eye)) in
        [(&scene.left, Eye::Left), (&scene.right, Eye::Right)].into_iter().enumerate()
    {
        let mut views = Vec::with_capacity(4);
        for (vi, fv) in capture.views.iter().enumerate() {
            let (ox, oy) = origins[ei][vi];
            let mask = if ei == 0 { &fv.mask_left } else { &fv.mask_right };
            views.push(ViewData {
                image: fv.image.iter().map(|p| crop_raster(p, ox, oy, side)).collect(),
                depth: crop_raster(&fv.depth, ox, oy, side),
                mask: crop_mask(mask, ox, oy, side),
            });
        }
        let truth = contour.truth_trace(eye, CenterMode::Boxing)?;
        samples.push(MultiViewSample {
            views: views.try_into().expect("four views"),
            truth,
            eye,
            sample_id: format!("{scene_id}_{}", eye.as_str()),
            rng_seed: scene.seed,
            rig: RigFile {
                rig: rig.clone(),
                crop_origins: Some([
                    (origins[ei][0].0 as u32, origins[ei][0].1 as u32),
                    (origins[ei][1].0 as u32, origins[ei][1].1 as u32),
                    (origins[ei][2].0 as u32, origins[ei][2].1 as u32),
                    (origins[ei][3].0 as u32, origins[ei][3].1 as u32),
                ]),
            },
        });
    }
    let right = samples.pop().unwrap();
    let left = samples.pop().unwrap();
    Ok((left, right))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::contour::ContourFamily;
    use crate::geometry::extract_inner_edge;
    use crate::synthgen::sample_scene;
    use nalgebra::{Point3, Vector3};

    fn frontal_contour(radius_mm: f64) -> FrameContour {
        let plane = FramePlane::from_origin_normal(Point3::origin(), Vector3::z()).unwrap();
        FrameContour::new(
            ContourFamily::Circle { radius_mm },
            0.0,
            Vector2::zeros(),
            plane,
        )
        .unwrap()
    }

    fn compact_rig() -> CameraRig {
        CameraRig::tower(&SceneConfig::compact().tower).unwrap()
    }

    #[test]
    fn mask_inner_boundary_reprojects_onto_contour() {
        let contour = frontal_contour(20.0);
        let rig = compact_rig();
        let sample = render_views(&contour, &rig, &RenderConfig::default()).unwrap();
        let mm_per_px = rig.mm_per_px();
        for (vi, view) in sample.views.iter().enumerate() {
            let edge = extract_inner_edge(&view.mask).unwrap();
            let cam = &rig.cameras()[vi];
            let mut ss = 0.0;
            for p in &edge.points {
                let (o, d) = cam.backproject_ray(p.pos);
                let world = contour.plane().intersect_ray(o, d.into_inner()).unwrap();
                let res_px = contour.polar_residual(contour.plane().to_plane(world)) / mm_per_px;
                ss += res_px * res_px;
            }
            let rms = (ss / edge.points.len() as f64).sqrt();
            assert!(rms < 0.3, "view {vi}: inner edge off the contour by {rms} px RMS");
        }
    }

    #[test]
    fn truth_trace_comes_from_geometry_not_pixels() {
        let contour = frontal_contour(20.0);
        let sample = render_views(&contour, &compact_rig(), &RenderConfig::default()).unwrap();
        for r in sample.truth.radii_mm() {
            assert!((r - 20.0).abs() < 1e-9);
        }
    }

    #[test]
    fn depth_separates_frame_from_everything_else() {
        let contour = frontal_contour(22.0);
        let cfg = RenderConfig { nose_overlap: true, ..RenderConfig::default() };
        let sample = render_views(&contour, &compact_rig(), &cfg).unwrap();
        sample.validate().unwrap();
        // the clutter blob actually shows up in its own depth band
        let nose_px = sample.views[0]
            .depth
            .data
            .iter()
            .filter(|&&d| (125..=175).contains(&d))
            .count();
        assert!(nose_px > 50, "expected nose-band pixels, found {nose_px}");
    }

    #[test]
    fn contour_outside_view_is_rejected() {
        let plane = FramePlane::from_origin_normal(Point3::origin(), Vector3::z()).unwrap();
        let contour = FrameContour::new(
            ContourFamily::Circle { radius_mm: 20.0 },
            0.0,
            Vector2::new(200.0, 0.0),
            plane,
        )
        .unwrap();
        match render_views(&contour, &compact_rig(), &RenderConfig::default()) {
            Err(SynthError::OutOfFrustum { .. }) => {}
            other => panic!("expected OutOfFrustum, got {:?}", other.map(|_| ())),
        }
    }

    #[test]
    fn split_scene_yields_two_valid_mirrored_samples() {
        let cfg = SceneConfig::compact();
        let scene = sample_scene(&cfg, 21).unwrap();
        let rig = CameraRig::tower(&cfg.tower).unwrap();
        let capture = render_scene(&scene, &rig, cfg.channels).unwrap();
        let (left, right) = split_eyes(&capture, &scene, &rig, &cfg, "scene00021").unwrap();
        left.validate().unwrap();
        right.validate().unwrap();
        assert_eq!(left.eye, Eye::Left);
        assert_eq!(left.sample_id, "scene00021_left");
        assert_eq!(left.views[0].mask.width, cfg.crop_px as usize);
        let n = crate::trace::TRACE_POINTS;
        for i in 0..n {
            let j = (n + n / 2 - i) % n;
            assert!((left.truth.radii_mm()[i] - right.truth.radii_mm()[j]).abs() < 1e-9);
        }
        // crop bookkeeping: origins differ between the two samples
        assert_ne!(left.rig.crop_origins, right.rig.crop_origins);
    }

    #[test]
    fn narrow_eye_spacing_makes_crops_collide() {
        let cfg = SceneConfig { eye_separation_mm: 40.0, ..SceneConfig::compact() };
        let scene = sample_scene(&cfg, 4).unwrap();
        let rig = CameraRig::tower(&cfg.tower).unwrap();
        let capture = render_scene(&scene, &rig, cfg.channels).unwrap();
        match split_eyes(&capture, &scene, &rig, &cfg, "s") {
            Err(SynthError::OverlapError { .. }) => {}
            other => panic!("expected OverlapError, got {:?}", other.map(|_| ())),
        }
    }

    #[test]
    fn rendering_is_deterministic() {
        let cfg = SceneConfig::compact();
        let scene = sample_scene(&cfg, 8).unwrap();
        let rig = CameraRig::tower(&cfg.tower).unwrap();
        let a = render_scene(&scene, &rig, 3).unwrap();
        let b = render_scene(&scene, &rig, 3).unwrap();
        for (va, vb) in a.views.iter().zip(&b.views) {
            assert_eq!(va.image, vb.image);
            assert_eq!(va.depth, vb.depth);
            assert_eq!(va.mask_left, vb.mask_left);
            assert_eq!(va.mask_right, vb.mask_right);
        }
    }
}
