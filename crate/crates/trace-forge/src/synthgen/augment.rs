//! Stochastic augmentation with label consistency: geometric transforms act
//! on all four views and the trace together, photometric ones on images only.
//!
//! Rotations are snapped to the trace's angular grid (multiples of 2π/600),
//! so the label transform is an exact circular shift rather than an
//! interpolation.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{mix_seed, MultiViewSample, SynthError, ViewData};
use crate::raster::{Mask, Plane, Raster8};
use crate::trace::{RadialTrace, TRACE_POINTS};

#[derive(Debug, Clone)]
pub struct AugmentationConfig {
    pub p_geometric: f64,
    pub p_noise: f64,
    pub p_color: f64,
    pub p_blur: f64,
    pub p_sharpness: f64,
    pub rotation_max_deg: f64,
    /// Translation bound as a fraction of the view width.
    pub translation_max_frac: f64,
    pub scale_range: (f64, f64),
    pub noise_sigma_max: f64,
    pub gain_range: (f64, f64),
    pub bias_max: f64,
    pub blur_sigma_max: f64,
    pub sharpness_max: f64,
    /// Mixed with the per-call seed; lets a whole training run re-seed.
    pub seed: u64,
}

impl Default for AugmentationConfig {
    fn default() -> Self {
        AugmentationConfig {
            p_geometric: 0.5,
            p_noise: 0.3,
            p_color: 0.3,
            p_blur: 0.3,
            p_sharpness: 0.3,
            rotation_max_deg: 10.0,
            translation_max_frac: 0.04,
            scale_range: (0.9, 1.1),
            noise_sigma_max: 0.03,
            gain_range: (0.8, 1.2),
            bias_max: 0.1,
            blur_sigma_max: 1.5,
            sharpness_max: 0.7,
            seed: 0,
        }
    }
}

impl AugmentationConfig {
    /// All probabilities zero: `augment` returns the input bit-exactly.
    pub fn identity() -> Self {
        AugmentationConfig {
            p_geometric: 0.0,
            p_noise: 0.0,
            p_color: 0.0,
            p_blur: 0.0,
            p_sharpness: 0.0,
            ..AugmentationConfig::default()
        }
    }
}

/// Inverse similarity map from output to source pixels, in image (y-down)
/// coordinates about the view center.
struct GeoMap {
    cx: f64,
    cy: f64,
    cos: f64,
    sin: f64,
    inv_s: f64,
    tx: f64,
    ty: f64,
}

impl GeoMap {
    fn src_of(&self, x: usize, y: usize) -> (f64, f64) {
        let ux = x as f64 - self.tx - self.cx;
        let uy = y as f64 - self.ty - self.cy;
        (
            self.cx + (self.cos * ux + self.sin * uy) * self.inv_s,
            self.cy + (-self.sin * ux + self.cos * uy) * self.inv_s,
        )
    }
}

fn warp_nn_raster(src: &Raster8, map: &GeoMap) -> Raster8 {
    let mut out = Raster8::zeros(src.width, src.height);
    for y in 0..src.height {
        for x in 0..src.width {
            let (sx, sy) = map.src_of(x, y);
            let (xi, yi) = (sx.round() as i64, sy.round() as i64);
            if xi >= 0 && yi >= 0 && (xi as usize) < src.width && (yi as usize) < src.height {
                out.set(x, y, src.get(xi as usize, yi as usize));
            }
        }
    }
    out
}

fn warp_nn_mask(src: &Mask, map: &GeoMap) -> Mask {
    let mut out = Mask::zeros(src.width, src.height);
    for y in 0..src.height {
        for x in 0..src.width {
            let (sx, sy) = map.src_of(x, y);
            let (xi, yi) = (sx.round() as i64, sy.round() as i64);
            if xi >= 0 && yi >= 0 && (xi as usize) < src.width && (yi as usize) < src.height {
                out.set(x, y, src.get(xi as usize, yi as usize));
            }
        }
    }
    out
}

fn warp_bilinear(src: &Plane, map: &GeoMap) -> Plane {
    let mut out = Plane::zeros(src.width, src.height);
    for y in 0..src.height {
        for x in 0..src.width {
            let (sx, sy) = map.src_of(x, y);
            if sx >= 0.0 && sy >= 0.0 && sx <= (src.width - 1) as f64 && sy <= (src.height - 1) as f64
            {
                out.set(x, y, src.sample_bilinear(sx, sy));
            }
        }
    }
    out
}

fn gauss(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.gen::<f64>().max(1e-300);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Applies the configured transforms to a sample. Geometric parameters are
/// shared across the four views (the trace is shared); photometric
/// parameters are drawn per view.
pub fn augment(
    sample: &MultiViewSample,
    cfg: &AugmentationConfig,
    seed: u64,
) -> Result<MultiViewSample, SynthError> {
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, seed));
    let geo_on = rng.gen::<f64>() < cfg.p_geometric;
    let noise_on = rng.gen::<f64>() < cfg.p_noise;
    let color_on = rng.gen::<f64>() < cfg.p_color;
    let blur_on = rng.gen::<f64>() < cfg.p_blur;
    let sharp_on = rng.gen::<f64>() < cfg.p_sharpness;
    if !(geo_on || noise_on || color_on || blur_on || sharp_on) {
        return Ok(sample.clone());
    }

    let w = sample.views[0].depth.width;
    let h = sample.views[0].depth.height;
    let step = std::f64::consts::TAU / TRACE_POINTS as f64;
    let max_steps = (cfg.rotation_max_deg.to_radians() / step).floor() as i64;
    let (k, s, tx, ty) = if geo_on {
        let k = rng.gen_range(-max_steps..=max_steps);
        let s = rng.gen_range(cfg.scale_range.0..=cfg.scale_range.1);
        let tmax = (cfg.translation_max_frac * w as f64).round() as i64;
        let (tx, ty) = (rng.gen_range(-tmax..=tmax), rng.gen_range(-tmax..=tmax));
        (k, s, tx, ty)
    } else {
        (0, 1.0, 0, 0)
    };
    let psi = k as f64 * step;
    let map = GeoMap {
        cx: (w - 1) as f64 / 2.0,
        cy: (h - 1) as f64 / 2.0,
        cos: psi.cos(),
        sin: psi.sin(),
        inv_s: 1.0 / s,
        tx: tx as f64,
        ty: ty as f64,
    };

    let mut views = Vec::with_capacity(4);
    for view in &sample.views {
        let mut planes: Vec<Plane> = view.image.iter().map(|r| r.to_plane(255.0)).collect();
        let (depth, mask) = if geo_on {
            planes = planes.iter().map(|p| warp_bilinear(p, &map)).collect();
            (warp_nn_raster(&view.depth, &map), warp_nn_mask(&view.mask, &map))
        } else {
            (view.depth.clone(), view.mask.clone())
        };
        if color_on {
            let gain = rng.gen_range(cfg.gain_range.0..=cfg.gain_range.1) as f32;
            let bias = rng.gen_range(-cfg.bias_max..=cfg.bias_max) as f32;
            for p in &mut planes {
                p.data.iter_mut().for_each(|v| *v = *v * gain + bias);
            }
        }
        if blur_on {
            let sigma = rng.gen_range(0.3..=cfg.blur_sigma_max);
            planes = planes.iter().map(|p| p.blur_gaussian(sigma)).collect();
        }
        if sharp_on {
            let amount = rng.gen_range(0.0..=cfg.sharpness_max) as f32;
            planes = planes
                .iter()
                .map(|p| {
                    let soft = p.blur_gaussian(1.0);
                    let mut out = p.clone();
                    for (o, s) in out.data.iter_mut().zip(&soft.data) {
                        *o += amount * (*o - s);
                    }
                    out
                })
                .collect();
        }
        if noise_on {
            let sigma = rng.gen_range(0.0..=cfg.noise_sigma_max);
            for p in &mut planes {
                for v in p.data.iter_mut() {
                    *v += (sigma * gauss(&mut rng)) as f32;
                }
            }
        }
        views.push(ViewData {
            image: planes.iter().map(|p| p.quantize(255.0)).collect(),
            depth,
            mask,
        });
    }

    // label side of the similarity: circular shift by k steps, radii scaled
    let radii = sample.truth.radii_mm();
    let flags = sample.truth.flags();
    let n = TRACE_POINTS;
    let mut new_radii = Vec::with_capacity(n);
    let mut new_flags = Vec::with_capacity(n);
    for i in 0..n {
        let j = (i as i64 + k).rem_euclid(n as i64) as usize;
        new_radii.push(radii[j] * s);
        new_flags.push(flags[j]);
    }
    let truth = RadialTrace::new(
        new_radii,
        sample.truth.angle0_rad(),
        sample.truth.center_2d(),
        sample.eye,
        new_flags,
    )?;

    Ok(MultiViewSample {
        views: views.try_into().expect("four views"),
        truth,
        eye: sample.eye,
        sample_id: sample.sample_id.clone(),
        rng_seed: sample.rng_seed,
        rig: sample.rig.clone(),
    })
}
