//! Learned-vs-geometric comparison on held-out samples.
//!
//! The classical estimator works in full camera frames, while dataset
//! samples store per-eye crops; `full_frame_masks` pastes a sample's masks
//! back at their recorded crop origins so both estimators see the same
//! pixels under the same calibration.

use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::fusionnet::FusionModel;
use crate::geometry::{geometric_trace, GeometricTraceOptions};
use crate::raster::Mask;
use crate::synthgen::MultiViewSample;
use crate::trace::trace_error;

/// Places four masks into full camera frames using the rig's crop origins.
/// Without crop origins the masks must already be full-frame.
pub fn masks_to_full_frame(
    masks: &[Mask; 4],
    rig: &crate::geometry::RigFile,
) -> Result<[Mask; 4], EvalError> {
    let cams = rig.rig.cameras();
    let mut out = Vec::with_capacity(4);
    for (vi, m) in masks.iter().enumerate() {
        let (w, h) = cams[vi].image_size();
        let (w, h) = (w as usize, h as usize);
        match rig.crop_origins {
            None => {
                if m.width != w || m.height != h {
                    return Err(EvalError::Config(format!(
                        "view {vi}: mask is {}x{} but camera expects {w}x{h} and no crop origin is recorded",
                        m.width, m.height
                    )));
                }
                out.push(m.clone());
            }
            Some(origins) => {
                let (ox, oy) = (origins[vi].0 as usize, origins[vi].1 as usize);
                if ox + m.width > w || oy + m.height > h {
                    return Err(EvalError::Config(format!(
                        "view {vi}: {}x{} crop at origin ({ox}, {oy}) overflows the {w}x{h} frame",
                        m.width, m.height
                    )));
                }
                let mut full = Mask::zeros(w, h);
                for y in 0..m.height {
                    let src = y * m.width;
                    let dst = (y + oy) * w + ox;
                    full.data[dst..dst + m.width].copy_from_slice(&m.data[src..src + m.width]);
                }
                out.push(full);
            }
        }
    }
    Ok(out.try_into().expect("four views"))
}

/// Rebuilds full-frame masks for a dataset sample.
pub fn full_frame_masks(sample: &MultiViewSample) -> Result<[Mask; 4], EvalError> {
    let masks: [Mask; 4] = std::array::from_fn(|i| sample.views[i].mask.clone());
    masks_to_full_frame(&masks, &sample.rig)
}

/// One sample's scores under both estimators. `geometric_mean_mm` is absent
/// exactly when the classical pipeline failed, with the failure recorded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeoSampleDelta {
    pub sample_id: String,
    pub learned_mean_mm: f64,
    pub geometric_mean_mm: Option<f64>,
    pub geometric_error: Option<String>,
}

/// Head-to-head summary. Win counts consider only samples where both
/// estimators produced a trace (`n_compared`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeoComparison {
    pub n_samples: usize,
    pub n_compared: usize,
    pub n_geometric_failures: usize,
    pub learned_wins: usize,
    pub geometric_wins: usize,
    pub ties: usize,
    /// learned_wins / n_compared; 0 when nothing was comparable.
    pub learned_win_rate: f64,
    /// Mean of per-sample mean errors, over all samples.
    pub learned_mean_mm: f64,
    /// Mean over the samples where the geometric estimator succeeded.
    pub geometric_mean_mm: Option<f64>,
    pub per_sample: Vec<GeoSampleDelta>,
}

fn geometric_mean_mm(sample: &MultiViewSample) -> Result<f64, EvalError> {
    let masks = full_frame_masks(sample)?;
    let opts = GeometricTraceOptions { eye: sample.eye, ..GeometricTraceOptions::default() };
    let trace = geometric_trace(&masks, &sample.rig.rig, &opts)?;
    Ok(trace_error(&trace, &sample.truth)?.mean_mm)
}

/// Runs both estimators over the samples. Geometric failures become
/// per-sample flags; learned-model failures abort, since the model is the
/// artifact under evaluation.
pub fn compare_to_geometric(
    model: &FusionModel,
    samples: &[MultiViewSample],
) -> Result<GeoComparison, EvalError> {
    if samples.is_empty() {
        return Err(EvalError::TooFewSamples { got: 0, need: 1 });
    }
    let mut per_sample = Vec::with_capacity(samples.len());
    let (mut learned_sum, mut geo_sum) = (0.0, 0.0);
    let (mut wins_l, mut wins_g, mut ties, mut failures) = (0usize, 0usize, 0usize, 0usize);
    for s in samples {
        let pred = model.predict_trace(s)?;
        let learned = trace_error(&pred, &s.truth)?.mean_mm;
        learned_sum += learned;
        let (geo, geo_err) = match geometric_mean_mm(s) {
            Ok(v) => (Some(v), None),
            Err(e) => {
                failures += 1;
                (None, Some(e.to_string()))
            }
        };
        if let Some(g) = geo {
            geo_sum += g;
            if learned < g {
                wins_l += 1;
            } else if g < learned {
                wins_g += 1;
            } else {
                ties += 1;
            }
        }
        per_sample.push(GeoSampleDelta {
            sample_id: s.sample_id.clone(),
            learned_mean_mm: learned,
            geometric_mean_mm: geo,
            geometric_error: geo_err,
        });
    }
    let n_compared = samples.len() - failures;
    Ok(GeoComparison {
        n_samples: samples.len(),
        n_compared,
        n_geometric_failures: failures,
        learned_wins: wins_l,
        geometric_wins: wins_g,
        ties,
        learned_win_rate: if n_compared == 0 { 0.0 } else { wins_l as f64 / n_compared as f64 },
        learned_mean_mm: learned_sum / samples.len() as f64,
        geometric_mean_mm: (n_compared > 0).then(|| geo_sum / n_compared as f64),
        per_sample,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fusionnet::{
        ChannelStats, EncoderSpec, FusionStrategy, Modality, ModelSize, FusionModel,
    };
    use crate::geometry::{CameraRig, RigFile, TowerConfig};
    use crate::raster::Raster8;
    use crate::synthgen::{render_scene, sample_scene, split_eyes, SceneConfig};
    use crate::trace::{fit_normalizer, Eye, RadialTrace, TRACE_POINTS};

    /// Chebyshev dilation by `r` pixels.
    fn dilate(mask: &Mask, r: usize) -> Mask {
        let mut out = Mask::zeros(mask.width, mask.height);
        let r = r as isize;
        for y in 0..mask.height as isize {
            for x in 0..mask.width as isize {
                if mask.data[y as usize * mask.width + x as usize] == 0 {
                    continue;
                }
                for dy in -r..=r {
                    for dx in -r..=r {
                        let (nx, ny) = (x + dx, y + dy);
                        if nx >= 0 && ny >= 0 && (nx as usize) < mask.width && (ny as usize) < mask.height {
                            out.data[ny as usize * mask.width + nx as usize] = 1;
                        }
                    }
                }
            }
        }
        out
    }

    /// One rendered scene at the default 0.25 mm/px scale; superellipse-only
    /// so the truth is never a constant-radius circle.
    fn rendered_pair() -> (MultiViewSample, MultiViewSample) {
        let cfg = SceneConfig {
            family_weights: [0.0, 0.0, 1.0, 0.0],
            nose_overlap_prob: 0.0,
            ..SceneConfig::default()
        };
        let rig = CameraRig::tower(&cfg.tower).unwrap();
        for seed in 1..40 {
            let Ok(scene) = sample_scene(&cfg, seed) else { continue };
            let Ok(capture) = render_scene(&scene, &rig, cfg.channels) else { continue };
            if let Ok((left, right)) = split_eyes(&capture, &scene, &rig, &cfg, "s00000") {
                return (left, right);
            }
        }
        panic!("no renderable scene in 40 seeds");
    }

    fn untrained_model(samples: &[MultiViewSample]) -> FusionModel {
        let truths: Vec<RadialTrace> = samples.iter().map(|s| s.truth.clone()).collect();
        let norm = fit_normalizer(&truths).unwrap();
        let modality = Modality::GrayDepth;
        FusionModel::init(
            EncoderSpec::sized(ModelSize::S, modality, 64),
            FusionStrategy::LateMax,
            modality,
            norm,
            ChannelStats::identity(modality.channels()),
            0,
        )
        .unwrap()
    }

    #[test]
    fn geometric_baseline_beats_an_untrained_model_until_masks_are_corrupted() {
        let (left, right) = rendered_pair();

        // clean masks: the classical estimator is essentially exact
        let mut clean_means = Vec::new();
        for s in [&left, &right] {
            let mean = geometric_mean_mm(s).unwrap();
            assert!(mean < 0.1, "{} clean geometric mean {mean} mm", s.sample_id);
            clean_means.push(mean);
        }

        // dilating the masks 3 px shifts the inner edge ~0.75 mm inward
        for s in [&left, &right] {
            let mut corrupted = s.clone();
            for v in &mut corrupted.views {
                let grown = dilate(&v.mask, 3);
                assert!(grown.area() > v.mask.area());
                v.mask = grown;
            }
            let clean = geometric_mean_mm(s).unwrap();
            let degraded = geometric_mean_mm(&corrupted).unwrap();
            assert!(
                degraded > 0.25 && degraded > 3.0 * clean,
                "dilation: clean {clean} mm, corrupted {degraded} mm"
            );
        }

        // head-to-head: an untrained model cannot beat a sub-0.1 mm oracle
        let samples = vec![left.clone(), right.clone()];
        let model = untrained_model(&samples);
        let cmp = compare_to_geometric(&model, &samples).unwrap();
        assert_eq!(cmp.n_samples, 2);
        assert_eq!(cmp.n_compared, 2);
        assert_eq!(cmp.n_geometric_failures, 0);
        assert_eq!(cmp.geometric_wins, 2);
        assert_eq!(cmp.learned_win_rate, 0.0);
        assert!(cmp.learned_mean_mm > cmp.geometric_mean_mm.unwrap());
        assert!(cmp.per_sample.iter().all(|d| d.geometric_error.is_none()));

        // a sample whose masks are empty flags the geometric failure but
        // still scores the learned model
        let mut broken = left.clone();
        for v in &mut broken.views {
            v.mask = Mask::zeros(v.mask.width, v.mask.height);
        }
        let cmp = compare_to_geometric(&model, &[left, right, broken]).unwrap();
        assert_eq!(cmp.n_samples, 3);
        assert_eq!(cmp.n_geometric_failures, 1);
        assert_eq!(cmp.n_compared, 2);
        let flagged = &cmp.per_sample[2];
        assert!(flagged.geometric_mean_mm.is_none());
        assert!(flagged.geometric_error.is_some());
        assert!(flagged.learned_mean_mm.is_finite());
    }

    #[test]
    fn empty_sample_set_is_too_few() {
        let model = {
            // any model works; build the cheapest possible one
            let truth = RadialTrace::from_predicted(vec![20.0; TRACE_POINTS], 0.0, Eye::Right).unwrap();
            let norm = fit_normalizer(std::slice::from_ref(&truth)).unwrap();
            FusionModel::init(
                EncoderSpec { in_channels: 2, input_px: 8, stages: vec![3, 4], head_hidden: 8 },
                FusionStrategy::LateMax,
                Modality::GrayDepth,
                norm,
                ChannelStats::identity(2),
                0,
            )
            .unwrap()
        };
        assert!(matches!(
            compare_to_geometric(&model, &[]),
            Err(EvalError::TooFewSamples { got: 0, need: 1 })
        ));
    }

    #[test]
    fn full_frame_mask_placement_is_validated() {
        let tower = TowerConfig {
            image_size: (32, 32),
            focal_length_px: 100.0,
            ..TowerConfig::default()
        };
        let rig = CameraRig::tower(&tower).unwrap();
        let truth = RadialTrace::from_predicted(vec![10.0; TRACE_POINTS], 0.0, Eye::Right).unwrap();
        let view = |side: usize| crate::synthgen::ViewData {
            image: vec![Raster8 { width: side, height: side, data: vec![0; side * side] }; 3],
            depth: Raster8 { width: side, height: side, data: vec![0; side * side] },
            mask: Mask {
                width: side,
                height: side,
                data: (0..side * side).map(|i| (i % 3 == 0) as u8).collect(),
            },
        };
        let sample = |side: usize, origins| MultiViewSample {
            views: std::array::from_fn(|_| view(side)),
            truth: truth.clone(),
            eye: Eye::Right,
            sample_id: "s_test".into(),
            rng_seed: 0,
            rig: RigFile { rig: rig.clone(), crop_origins: origins },
        };

        // crop placed at its origin lands in the right corner of the frame
        let s = sample(8, Some([(24, 24); 4]));
        let full = full_frame_masks(&s).unwrap();
        assert_eq!(full[0].width, 32);
        assert_eq!(full[0].area(), s.views[0].mask.area());
        assert_eq!(full[0].get(24, 24), s.views[0].mask.get(0, 0));
        assert_eq!(full[1].get(31, 24), s.views[1].mask.get(7, 0));
        assert!(!full[0].get(0, 0));

        // origin that overflows the frame
        assert!(full_frame_masks(&sample(8, Some([(28, 28); 4]))).is_err());
        // no origins recorded and wrong size
        assert!(full_frame_masks(&sample(8, None)).is_err());
        // no origins but full-size masks pass through unchanged
        let s = sample(32, None);
        let full = full_frame_masks(&s).unwrap();
        assert_eq!(full[0], s.views[0].mask);
    }
}
