//! Grid runner: loads the dataset once, caches the tensor pipeline per
//! modality, then trains and evaluates every cell.
//!
//! Hygiene rules baked in here: the label normalizer and the channel
//! statistics are fit on the training split only, and checkpoint selection
//! (inside `train`) uses the validation split only — the test split is
//! touched exactly once per cell, for the final evaluation.
//!
//! Cells run sequentially; each cell's training is internally deterministic
//! in its seed, so the whole payload is reproducible. A failed cell records
//! its error string and the runner moves on.

use std::collections::HashMap;
use std::path::Path;
use std::time::Instant;

use log::{info, warn};

use super::report::{
    cell_metrics_from_reports, rank_cells, CellKey, CellMetrics, CellSummary, CellTiming,
    ExperimentGrid, ExperimentReport, GridEcho, ReportPayload, ReportTiming, REPORT_SCHEMA,
};
use super::{split_summary, EvalError};
use crate::fusionnet::{
    build_raw_input, train, ChannelStats, EncoderSpec, FusionModel, FusionStrategy, Modality,
    ModelSize, TensorDataset,
};
use crate::synthgen::{load_manifest, load_sample, DatasetManifest, MultiViewSample, Split};
use crate::trace::{fit_normalizer, trace_error, RadialTrace, TraceErrorReport, TraceNormalizer};

pub(crate) fn load_split(
    root: &Path,
    manifest: &DatasetManifest,
    split: Split,
) -> Result<Vec<MultiViewSample>, EvalError> {
    manifest
        .entries_for(split)
        .map(|e| load_sample(root, e).map_err(EvalError::from))
        .collect()
}

/// Tensors and channel stats for one modality, shared by every cell that
/// uses it (sizes and fusion strategies do not change the input pipeline).
pub(crate) struct ModalityData {
    pub(crate) stats: ChannelStats,
    pub(crate) train: TensorDataset,
    pub(crate) val: TensorDataset,
    pub(crate) test: TensorDataset,
}

pub(crate) fn prepare_modality(
    modality: Modality,
    input_px: usize,
    norm: &TraceNormalizer,
    train_samples: &[MultiViewSample],
    val_samples: &[MultiViewSample],
    test_samples: &[MultiViewSample],
) -> Result<ModalityData, EvalError> {
    let raw_train: Vec<_> = train_samples
        .iter()
        .map(|s| build_raw_input(s, modality, input_px))
        .collect::<Result<_, _>>()?;
    let stats = ChannelStats::fit(&raw_train)?;
    Ok(ModalityData {
        train: TensorDataset::from_samples(train_samples, modality, &stats, norm, input_px)?,
        val: TensorDataset::from_samples(val_samples, modality, &stats, norm, input_px)?,
        test: TensorDataset::from_samples(test_samples, modality, &stats, norm, input_px)?,
        stats,
    })
}

/// Per-sample error reports of a model over an evaluation set.
fn evaluate(
    model: &FusionModel,
    set: &TensorDataset,
) -> Result<Vec<(String, TraceErrorReport)>, EvalError> {
    let mut out = Vec::with_capacity(set.len());
    for ((inputs, truth), id) in set.inputs.iter().zip(&set.truths).zip(&set.ids) {
        let raw = model.forward(inputs)?;
        let mm = model.normalizer.denormalize(&raw);
        let pred = RadialTrace::from_predicted(mm, truth.angle0_rad(), truth.eye())?;
        out.push((id.clone(), trace_error(&pred, truth)?));
    }
    Ok(out)
}

fn run_cell(
    grid: &ExperimentGrid,
    key: &CellKey,
    cell: (Modality, ModelSize, FusionStrategy, u64),
    md: &ModalityData,
    norm: &TraceNormalizer,
) -> Result<CellMetrics, EvalError> {
    let (modality, size, fusion, seed) = cell;
    let spec = EncoderSpec::sized(size, modality, grid.input_px);
    let mut model =
        FusionModel::init(spec, fusion, modality, norm.clone(), md.stats.clone(), seed)?;
    let mut cfg = grid.train.clone();
    cfg.seed = seed;
    let report = train(&mut model, &md.train, &md.val, &cfg)?;
    let per_sample = evaluate(&model, &md.test)?;
    let final_train_loss = report.history.last().map_or(f64::NAN, |h| h.train_loss);
    info!(
        "cell {}: best val {:.4} mm at epoch {}",
        key.label(),
        report.best_val_mean_mm,
        report.best_epoch
    );
    Ok(cell_metrics_from_reports(
        per_sample,
        model.n_params() as u64,
        report.best_epoch as u64,
        report.best_val_mean_mm,
        final_train_loss,
    ))
}

/// Trains and evaluates every cell of the grid on the dataset under
/// `grid.dataset_root`, returning the assembled report. Per-cell failures
/// (divergence, incompatible shapes) are recorded in that cell's summary and
/// do not abort the remaining cells; dataset-level problems do.
pub fn run_grid(grid: &ExperimentGrid) -> Result<ExperimentReport, EvalError> {
    grid.validate()?;
    let t0 = Instant::now();
    let root = grid.dataset_root.as_path();
    let manifest = load_manifest(root)?;
    let splits = split_summary(&manifest)?;
    if splits.n_test == 0 {
        return Err(EvalError::TooFewSamples { got: 0, need: 1 });
    }

    let train_samples = load_split(root, &manifest, Split::Train)?;
    let val_samples = load_split(root, &manifest, Split::Val)?;
    let test_samples = load_split(root, &manifest, Split::Test)?;
    let train_truths: Vec<RadialTrace> =
        train_samples.iter().map(|s| s.truth.clone()).collect();
    let norm = fit_normalizer(&train_truths)?;

    let mut modality_data: HashMap<Modality, ModalityData> = HashMap::new();
    for &m in &grid.modalities {
        let md = prepare_modality(
            m,
            grid.input_px,
            &norm,
            &train_samples,
            &val_samples,
            &test_samples,
        )?;
        modality_data.insert(m, md);
    }

    let mut cells = Vec::new();
    let mut cell_timing = Vec::new();
    for cell in grid.cells() {
        let (modality, size, fusion, seed) = cell;
        let key = CellKey::new(modality, size, fusion, seed);
        let md = &modality_data[&modality];
        let t_cell = Instant::now();
        let summary = match run_cell(grid, &key, cell, md, &norm) {
            Ok(metrics) => CellSummary { key: key.clone(), error: None, metrics: Some(metrics) },
            Err(e) => {
                warn!("cell {} failed: {e}", key.label());
                CellSummary { key: key.clone(), error: Some(e.to_string()), metrics: None }
            }
        };
        cell_timing.push(CellTiming { cell: key.label(), seconds: t_cell.elapsed().as_secs_f64() });
        cells.push(summary);
    }

    let payload = ReportPayload {
        schema: REPORT_SCHEMA.to_owned(),
        config: GridEcho {
            dataset: grid.dataset_root.display().to_string(),
            dataset_seed: manifest.seed,
            n_scenes: manifest.n_scenes,
            modalities: grid.modalities.iter().map(|m| m.as_str().to_owned()).collect(),
            sizes: grid.sizes.iter().map(|s| s.as_str().to_owned()).collect(),
            fusions: grid.fusions.iter().map(|f| f.as_str().to_owned()).collect(),
            seeds: grid.seeds.clone(),
            input_px: grid.input_px,
            epochs: grid.train.epochs,
            batch_size: grid.train.batch_size,
            learning_rate: grid.train.learning_rate,
            loss: grid.train.loss.as_str().to_owned(),
        },
        splits,
        cells,
        ranking: Vec::new(),
    };
    let mut payload = payload;
    payload.ranking = rank_cells(&payload).iter().map(|c| c.key.label()).collect();

    Ok(ExperimentReport {
        payload,
        timing: ReportTiming {
            total_seconds: t0.elapsed().as_secs_f64(),
            cells: cell_timing,
        },
    })
}
