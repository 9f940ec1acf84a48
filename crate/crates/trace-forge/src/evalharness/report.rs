//! Report schema, grid description, ranking and case selection.
//!
//! File format (`report.json`): one JSON object
//! `{ "payload": ReportPayload, "timing": ReportTiming }`. The payload is a
//! pure function of the dataset and the grid (field order is fixed by the
//! struct definitions below); timings are the only non-reproducible part.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::EvalError;
use crate::fusionnet::{FusionStrategy, LossKind, Modality, ModelSize, TrainConfig};
use crate::synthgen::{DatasetManifest, Split};
use crate::trace::{TraceErrorReport, TRACE_POINTS};

/// One full experiment: the cartesian product of the four axes, trained and
/// evaluated on the dataset under `dataset_root`.
#[derive(Debug, Clone)]
pub struct ExperimentGrid {
    pub modalities: Vec<Modality>,
    pub sizes: Vec<ModelSize>,
    pub fusions: Vec<FusionStrategy>,
    pub seeds: Vec<u64>,
    pub dataset_root: PathBuf,
    /// Side of the downsampled square tensor fed to the encoder.
    pub input_px: usize,
    /// Shared training budget; `seed` is overridden per cell.
    pub train: TrainConfig,
}

impl ExperimentGrid {
    /// Single-cell starter grid with the default training budget.
    pub fn single(dataset_root: PathBuf) -> Self {
        ExperimentGrid {
            modalities: vec![Modality::GrayDepth],
            sizes: vec![ModelSize::S],
            fusions: vec![FusionStrategy::LateMax],
            seeds: vec![42],
            dataset_root,
            input_px: 32,
            train: TrainConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<(), EvalError> {
        fn dup<T: PartialEq + std::fmt::Debug>(axis: &str, v: &[T]) -> Result<(), EvalError> {
            if v.is_empty() {
                return Err(EvalError::Config(format!("axis {axis:?} is empty")));
            }
            for i in 0..v.len() {
                if v[i + 1..].contains(&v[i]) {
                    return Err(EvalError::Config(format!(
                        "axis {axis:?} lists {:?} twice",
                        v[i]
                    )));
                }
            }
            Ok(())
        }
        dup("modalities", &self.modalities)?;
        dup("sizes", &self.sizes)?;
        dup("fusions", &self.fusions)?;
        dup("seeds", &self.seeds)?;
        if self.input_px == 0 {
            return Err(EvalError::Config("input_px must be positive".into()));
        }
        if self.train.epochs == 0 {
            return Err(EvalError::Config("epochs must be at least 1".into()));
        }
        Ok(())
    }

    /// Cells in declared nested order: modality, size, fusion, seed.
    pub fn cells(&self) -> Vec<(Modality, ModelSize, FusionStrategy, u64)> {
        let mut out = Vec::new();
        for &m in &self.modalities {
            for &s in &self.sizes {
                for &f in &self.fusions {
                    for &seed in &self.seeds {
                        out.push((m, s, f, seed));
                    }
                }
            }
        }
        out
    }

    /// Parses the plain-text grid config (`grid v1` header, one `key values`
    /// line each). Unknown keys are an error; missing keys keep the
    /// `single()` defaults.
    pub fn from_config_text(text: &str, dataset_root: PathBuf) -> Result<Self, EvalError> {
        let mut grid = ExperimentGrid::single(dataset_root);
        let bad = |ln: usize, msg: String| EvalError::Config(format!("line {}: {msg}", ln + 1));
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, "grid v1")) => {}
            _ => return Err(EvalError::Config("first line must be \"grid v1\"".into())),
        }
        for (ln, line) in lines {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let mut parts = line.split_whitespace();
            let key = parts.next().unwrap();
            let vals: Vec<&str> = parts.collect();
            if vals.is_empty() {
                return Err(bad(ln, format!("key {key:?} has no value")));
            }
            let one = |vals: &[&str]| -> Result<String, EvalError> {
                if vals.len() == 1 {
                    Ok(vals[0].to_owned())
                } else {
                    Err(bad(ln, format!("key {key:?} takes one value, got {}", vals.len())))
                }
            };
            match key {
                "modalities" => {
                    grid.modalities = vals
                        .iter()
                        .map(|v| {
                            Modality::parse(v).ok_or_else(|| bad(ln, format!("bad modality {v:?}")))
                        })
                        .collect::<Result<_, _>>()?;
                }
                "sizes" => {
                    grid.sizes = vals
                        .iter()
                        .map(|v| {
                            ModelSize::parse(v).ok_or_else(|| bad(ln, format!("bad size {v:?}")))
                        })
                        .collect::<Result<_, _>>()?;
                }
                "fusions" => {
                    grid.fusions = vals
                        .iter()
                        .map(|v| {
                            FusionStrategy::parse(v)
                                .ok_or_else(|| bad(ln, format!("bad fusion {v:?}")))
                        })
                        .collect::<Result<_, _>>()?;
                }
                "seeds" => {
                    grid.seeds = vals
                        .iter()
                        .map(|v| v.parse().map_err(|e| bad(ln, format!("bad seed {v:?}: {e}"))))
                        .collect::<Result<_, _>>()?;
                }
                "input_px" => {
                    grid.input_px =
                        one(&vals)?.parse().map_err(|e| bad(ln, format!("input_px: {e}")))?;
                }
                "epochs" => {
                    grid.train.epochs =
                        one(&vals)?.parse().map_err(|e| bad(ln, format!("epochs: {e}")))?;
                }
                "batch_size" => {
                    grid.train.batch_size =
                        one(&vals)?.parse().map_err(|e| bad(ln, format!("batch_size: {e}")))?;
                }
                "learning_rate" => {
                    grid.train.learning_rate =
                        one(&vals)?.parse().map_err(|e| bad(ln, format!("learning_rate: {e}")))?;
                }
                "loss" => {
                    let v = one(&vals)?;
                    grid.train.loss = LossKind::parse(&v)
                        .ok_or_else(|| bad(ln, format!("bad loss {v:?} (mse or l1)")))?;
                }
                other => return Err(bad(ln, format!("unknown key {other:?}"))),
            }
        }
        grid.validate()?;
        Ok(grid)
    }

    pub fn to_config_text(&self) -> String {
        let mut out = String::from("grid v1\n");
        let join = |items: Vec<String>| items.join(" ");
        let _ = writeln!(
            out,
            "modalities {}",
            join(self.modalities.iter().map(|m| m.as_str().to_owned()).collect())
        );
        let _ =
            writeln!(out, "sizes {}", join(self.sizes.iter().map(|s| s.as_str().to_owned()).collect()));
        let _ = writeln!(
            out,
            "fusions {}",
            join(self.fusions.iter().map(|f| f.as_str().to_owned()).collect())
        );
        let _ = writeln!(out, "seeds {}", join(self.seeds.iter().map(|s| s.to_string()).collect()));
        let _ = writeln!(out, "input_px {}", self.input_px);
        let _ = writeln!(out, "epochs {}", self.train.epochs);
        let _ = writeln!(out, "batch_size {}", self.train.batch_size);
        let _ = writeln!(out, "learning_rate {}", self.train.learning_rate);
        let _ = writeln!(out, "loss {}", self.train.loss.as_str());
        out
    }
}

/// Identity of one grid cell.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellKey {
    pub modality: String,
    pub size: String,
    pub fusion: String,
    pub seed: u64,
}

impl CellKey {
    pub fn new(m: Modality, s: ModelSize, f: FusionStrategy, seed: u64) -> Self {
        CellKey {
            modality: m.as_str().to_owned(),
            size: s.as_str().to_owned(),
            fusion: f.as_str().to_owned(),
            seed,
        }
    }

    pub fn label(&self) -> String {
        format!("{}/{}/{}/seed{}", self.modality, self.size, self.fusion, self.seed)
    }

    /// Tie-break ordering: modality, size, fusion lexicographic, then seed.
    fn order_key(&self) -> (&str, &str, &str, u64) {
        (&self.modality, &self.size, &self.fusion, self.seed)
    }
}

/// Order statistics of a set of absolute errors, in mm. Median is the middle
/// element for odd counts and the midpoint of the two central order
/// statistics for even counts (matching the per-trace metric).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateMm {
    pub min_mm: f64,
    pub max_mm: f64,
    pub mean_mm: f64,
    pub median_mm: f64,
}

impl AggregateMm {
    pub fn from_errors(errs: &[f64]) -> Option<Self> {
        if errs.is_empty() {
            return None;
        }
        let mut sorted = errs.to_vec();
        sorted.sort_by(f64::total_cmp);
        let n = sorted.len();
        let median = if n % 2 == 1 {
            sorted[n / 2]
        } else {
            (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
        };
        Some(AggregateMm {
            min_mm: sorted[0],
            max_mm: sorted[n - 1],
            mean_mm: sorted.iter().sum::<f64>() / n as f64,
            median_mm: median,
        })
    }
}

/// Per-sample error summary kept in the report so per-sample distributions
/// stay inspectable without the full 600-point vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleError {
    pub sample_id: String,
    pub mean_mm: f64,
    pub median_mm: f64,
    pub min_mm: f64,
    pub max_mm: f64,
    pub frac_under_1mm: f64,
    pub n_under_1mm: u64,
}

impl SampleError {
    pub fn from_report(sample_id: String, r: &TraceErrorReport) -> Self {
        let n_under = r.per_point_abs_err.iter().filter(|&&e| e < 1.0).count() as u64;
        SampleError {
            sample_id,
            mean_mm: r.mean_mm,
            median_mm: r.median_mm,
            min_mm: r.min_mm,
            max_mm: r.max_mm,
            frac_under_1mm: r.frac_under_1mm,
            n_under_1mm: n_under,
        }
    }
}

/// Everything measured for one successfully trained cell.
///
/// `pooled` is the primary statistic: order statistics over all per-point
/// errors of the test split pooled together (600 × N values), the scope in
/// which "fraction of measures under 1 mm" is counted. `sample_means`
/// aggregates the per-sample mean errors instead; both are reported.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellMetrics {
    pub pooled: AggregateMm,
    pub frac_under_1mm: f64,
    pub points_under_1mm: u64,
    pub points_total: u64,
    pub sample_means: AggregateMm,
    pub per_sample: Vec<SampleError>,
    pub n_params: u64,
    pub best_epoch: u64,
    pub best_val_mean_mm: f64,
    pub final_train_loss: f64,
}

/// One grid cell: either metrics or the error that stopped it. Exactly one
/// of the two fields is set; a failed cell never aborts its siblings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub key: CellKey,
    pub error: Option<String>,
    pub metrics: Option<CellMetrics>,
}

/// SHA-256 over the sorted sample ids of each split, plus counts. Any edit
/// to split membership changes the corresponding hash.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSummary {
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub train_sha256: String,
    pub val_sha256: String,
    pub test_sha256: String,
}

/// The grid and budget echoed back so a report is self-describing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridEcho {
    pub dataset: String,
    pub dataset_seed: u64,
    pub n_scenes: usize,
    pub modalities: Vec<String>,
    pub sizes: Vec<String>,
    pub fusions: Vec<String>,
    pub seeds: Vec<u64>,
    pub input_px: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub loss: String,
}

/// Deterministic part of a report: identical for identical dataset + grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportPayload {
    pub schema: String,
    pub config: GridEcho,
    pub splits: SplitSummary,
    pub cells: Vec<CellSummary>,
    /// Cell labels ordered by ascending pooled mean error (failed cells are
    /// not ranked).
    pub ranking: Vec<String>,
}

pub const REPORT_SCHEMA: &str = "trace-forge report v1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellTiming {
    pub cell: String,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportTiming {
    pub total_seconds: f64,
    pub cells: Vec<CellTiming>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub payload: ReportPayload,
    pub timing: ReportTiming,
}

impl ReportPayload {
    /// Canonical serialization of the reproducible part, for byte-level
    /// comparisons between runs.
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("payload serializes");
        s.push('\n');
        s
    }
}

pub fn write_report(report: &ExperimentReport, path: &Path) -> Result<(), EvalError> {
    let mut s = serde_json::to_string_pretty(report).expect("report serializes");
    s.push('\n');
    fs::write(path, s)?;
    Ok(())
}

pub fn read_report(path: &Path) -> Result<ExperimentReport, EvalError> {
    let text = fs::read_to_string(path)?;
    let report: ExperimentReport = serde_json::from_str(&text)
        .map_err(|e| EvalError::Report { path: path.display().to_string(), msg: e.to_string() })?;
    if report.payload.schema != REPORT_SCHEMA {
        return Err(EvalError::Report {
            path: path.display().to_string(),
            msg: format!("unsupported schema {:?}", report.payload.schema),
        });
    }
    Ok(report)
}

fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    let mut out = String::with_capacity(64);
    for b in digest {
        let _ = write!(out, "{b:02x}");
    }
    out
}

fn split_ids(manifest: &DatasetManifest, split: Split) -> Vec<String> {
    let mut ids: Vec<String> =
        manifest.entries_for(split).map(|e| e.sample_id.clone()).collect();
    ids.sort();
    ids
}

fn ids_hash(ids: &[String]) -> String {
    sha256_hex(ids.join("\n").as_bytes())
}

/// Rejects any sample id that appears in more than one split (or twice in
/// one); in particular any train/test overlap.
pub fn validate_split_hygiene(manifest: &DatasetManifest) -> Result<(), EvalError> {
    let mut seen: HashMap<&str, Split> = HashMap::new();
    for e in &manifest.entries {
        if let Some(prev) = seen.insert(&e.sample_id, e.split) {
            return Err(EvalError::SplitHygiene(format!(
                "sample {:?} listed in both {} and {}",
                e.sample_id,
                prev.as_str(),
                e.split.as_str()
            )));
        }
    }
    Ok(())
}

/// Split counts and membership hashes, after the hygiene check.
pub fn split_summary(manifest: &DatasetManifest) -> Result<SplitSummary, EvalError> {
    validate_split_hygiene(manifest)?;
    let train = split_ids(manifest, Split::Train);
    let val = split_ids(manifest, Split::Val);
    let test = split_ids(manifest, Split::Test);
    Ok(SplitSummary {
        n_train: train.len(),
        n_val: val.len(),
        n_test: test.len(),
        train_sha256: ids_hash(&train),
        val_sha256: ids_hash(&val),
        test_sha256: ids_hash(&test),
    })
}

/// Successful cells by ascending pooled mean error; equal means fall back to
/// (modality, size, fusion, seed) lexicographic order.
pub fn rank_cells(payload: &ReportPayload) -> Vec<&CellSummary> {
    let mut cells: Vec<&CellSummary> =
        payload.cells.iter().filter(|c| c.metrics.is_some()).collect();
    cells.sort_by(|a, b| {
        let ma = a.metrics.as_ref().unwrap().pooled.mean_mm;
        let mb = b.metrics.as_ref().unwrap().pooled.mean_mm;
        ma.total_cmp(&mb).then_with(|| a.key.order_key().cmp(&b.key.order_key()))
    });
    cells
}

/// Qualitative case pick: sample ids of the best, median and worst test
/// samples by per-sample mean error.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseSelection {
    pub best: String,
    pub median: String,
    pub worst: String,
}

/// Picks cases from one cell. Samples sort by (mean error, sample id);
/// median is the element at index ⌊n/2⌋ of that order.
pub fn select_cases_in(cell: &CellSummary) -> Result<CaseSelection, EvalError> {
    let metrics = cell
        .metrics
        .as_ref()
        .ok_or_else(|| EvalError::Config(format!("cell {} failed, no cases", cell.key.label())))?;
    let n = metrics.per_sample.len();
    if n < 3 {
        return Err(EvalError::TooFewSamples { got: n, need: 3 });
    }
    let mut order: Vec<&SampleError> = metrics.per_sample.iter().collect();
    order.sort_by(|a, b| {
        a.mean_mm.total_cmp(&b.mean_mm).then_with(|| a.sample_id.cmp(&b.sample_id))
    });
    Ok(CaseSelection {
        best: order[0].sample_id.clone(),
        median: order[n / 2].sample_id.clone(),
        worst: order[n - 1].sample_id.clone(),
    })
}

/// Cases from the top-ranked cell of the report.
pub fn select_cases(report: &ExperimentReport) -> Result<CaseSelection, EvalError> {
    let ranked = rank_cells(&report.payload);
    let top = ranked
        .first()
        .ok_or_else(|| EvalError::Config("report has no successful cells".into()))?;
    select_cases_in(top)
}

/// Pooled and per-sample-mean aggregates for one cell's evaluated traces.
pub(crate) fn cell_metrics_from_reports(
    per_sample: Vec<(String, TraceErrorReport)>,
    n_params: u64,
    best_epoch: u64,
    best_val_mean_mm: f64,
    final_train_loss: f64,
) -> CellMetrics {
    let mut pooled: Vec<f64> = Vec::with_capacity(per_sample.len() * TRACE_POINTS);
    let mut means: Vec<f64> = Vec::with_capacity(per_sample.len());
    let mut under = 0u64;
    let mut summaries = Vec::with_capacity(per_sample.len());
    for (id, rep) in &per_sample {
        pooled.extend_from_slice(&rep.per_point_abs_err);
        means.push(rep.mean_mm);
        let s = SampleError::from_report(id.clone(), rep);
        under += s.n_under_1mm;
        summaries.push(s);
    }
    let total = pooled.len() as u64;
    CellMetrics {
        pooled: AggregateMm::from_errors(&pooled).expect("non-empty test split"),
        frac_under_1mm: under as f64 / total as f64,
        points_under_1mm: under,
        points_total: total,
        sample_means: AggregateMm::from_errors(&means).expect("non-empty test split"),
        per_sample: summaries,
        n_params,
        best_epoch,
        best_val_mean_mm,
        final_train_loss,
    }
}
