//! Mini-batch Adam training with seeded shuffling, per-epoch validation in
//! millimetres, and best-validation checkpointing. Deterministic: the same
//! seed replays the exact same run.

use log::info;
use rand::seq::SliceRandom;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::model::{build_input, ChannelStats, FusionModel, InputTensor, LossKind, Modality};
use super::NetError;
use crate::synthgen::{mix_seed, MultiViewSample};
use crate::trace::{RadialTrace, TraceNormalizer};

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub epochs: usize,
    pub seed: u64,
    pub loss: LossKind,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 8,
            learning_rate: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            epochs: 200,
            seed: 42,
            loss: LossKind::Mse,
        }
    }
}

/// Pre-built tensors and normalized targets for one split, so epochs never
/// re-touch the raster pipeline.
#[derive(Debug, Clone)]
pub struct TensorDataset {
    pub inputs: Vec<[InputTensor; 4]>,
    pub targets_norm: Vec<Vec<f64>>,
    pub truths: Vec<RadialTrace>,
    pub ids: Vec<String>,
}

impl TensorDataset {
    pub fn from_samples(
        samples: &[MultiViewSample],
        modality: Modality,
        stats: &ChannelStats,
        norm: &TraceNormalizer,
        input_px: usize,
    ) -> Result<Self, NetError> {
        let mut out = TensorDataset {
            inputs: Vec::with_capacity(samples.len()),
            targets_norm: Vec::with_capacity(samples.len()),
            truths: Vec::with_capacity(samples.len()),
            ids: Vec::with_capacity(samples.len()),
        };
        for s in samples {
            out.inputs.push(build_input(s, modality, stats, input_px)?);
            out.targets_norm.push(norm.normalize(&s.truth)?);
            out.truths.push(s.truth.clone());
            out.ids.push(s.sample_id.clone());
        }
        Ok(out)
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_mean_mm: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub history: Vec<EpochStats>,
    pub best_epoch: usize,
    pub best_val_mean_mm: f64,
}

/// Mean absolute radius error in mm over a dataset, denormalized.
pub fn mean_error_mm(model: &FusionModel, set: &TensorDataset) -> Result<f64, NetError> {
    let mut total = 0.0;
    for (inputs, truth) in set.inputs.iter().zip(&set.truths) {
        let out = model.forward(inputs)?;
        let mm = model.normalizer.denormalize(&out);
        let per: f64 = mm
            .iter()
            .zip(truth.radii_mm())
            .map(|(p, t)| (p - t).abs())
            .sum::<f64>()
            / mm.len() as f64;
        total += per;
    }
    Ok(total / set.len() as f64)
}

/// Trains in place. Returns the history; the model is left at the weights of
/// the best validation epoch.
pub fn train(
    model: &mut FusionModel,
    train_set: &TensorDataset,
    val_set: &TensorDataset,
    cfg: &TrainConfig,
) -> Result<TrainReport, NetError> {
    if cfg.batch_size == 0 {
        return Err(NetError::Config("batch_size must be at least 1".into()));
    }
    if !cfg.learning_rate.is_finite() || cfg.learning_rate < 0.0 {
        return Err(NetError::Config("learning_rate must be finite and non-negative".into()));
    }
    if train_set.is_empty() || val_set.is_empty() {
        return Err(NetError::Config("train and validation splits must be non-empty".into()));
    }

    let n_params = model.n_params();
    let mut m = vec![0.0; n_params];
    let mut v = vec![0.0; n_params];
    let mut step = 0u64;
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(usize, f64, Vec<f64>)> = None;

    let mut indices: Vec<usize> = (0..train_set.len()).collect();
    for epoch in 0..cfg.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, epoch as u64));
        indices.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for batch in indices.chunks(cfg.batch_size) {
            let mut grad_acc = vec![0.0; n_params];
            let mut batch_loss = 0.0;
            for &i in batch {
                let (l, g) =
                    model.backward(&train_set.inputs[i], &train_set.targets_norm[i], cfg.loss)?;
                if !l.is_finite() {
                    return Err(NetError::DivergenceDetected { epoch, loss: l });
                }
                batch_loss += l;
                for (a, gi) in grad_acc.iter_mut().zip(&g) {
                    *a += gi;
                }
            }
            let scale = 1.0 / batch.len() as f64;
            loss_sum += batch_loss;
            step += 1;
            let bc1 = 1.0 - cfg.beta1.powi(step as i32);
            let bc2 = 1.0 - cfg.beta2.powi(step as i32);
            let params = model.params_mut();
            for j in 0..n_params {
                let g = grad_acc[j] * scale;
                m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * g;
                v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * g * g;
                let mh = m[j] / bc1;
                let vh = v[j] / bc2;
                params[j] -= cfg.learning_rate * mh / (vh.sqrt() + cfg.epsilon);
            }
        }
        let train_loss = loss_sum / train_set.len() as f64;
        let val_mean_mm = mean_error_mm(model, val_set)?;
        if !val_mean_mm.is_finite() {
            return Err(NetError::DivergenceDetected { epoch, loss: val_mean_mm });
        }
        info!("epoch {epoch}: train loss {train_loss:.6}, val mean {val_mean_mm:.4} mm");
        history.push(EpochStats { epoch, train_loss, val_mean_mm });
        if best.as_ref().map_or(true, |(_, b, _)| val_mean_mm < *b) {
            best = Some((epoch, val_mean_mm, model.params().to_vec()));
        }
    }

    let (best_epoch, best_val_mean_mm) = match best {
        Some((e, b, params)) => {
            model.params_mut().copy_from_slice(&params);
            (e, b)
        }
        None => (0, f64::NAN),
    };
    Ok(TrainReport { history, best_epoch, best_val_mean_mm })
}

/// Convenience: computes a per-sample mean-error (mm) list without assuming
/// the dataset was built with the model's own stats (it must be).
pub fn per_sample_error_mm(
    model: &FusionModel,
    set: &TensorDataset,
) -> Result<Vec<(String, f64)>, NetError> {
    let mut out = Vec::with_capacity(set.len());
    for ((inputs, truth), id) in set.inputs.iter().zip(&set.truths).zip(&set.ids) {
        let pred = model.forward(inputs)?;
        let mm = model.normalizer.denormalize(&pred);
        let e = mm
            .iter()
            .zip(truth.radii_mm())
            .map(|(p, t)| (p - t).abs())
            .sum::<f64>()
            / mm.len() as f64;
        out.push((id.clone(), e));
    }
    Ok(out)
}
