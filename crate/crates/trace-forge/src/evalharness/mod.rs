//! Experiment harness: trains every cell of a modality × size × fusion grid
//! on a generated dataset, aggregates test-split error statistics, ranks the
//! cells, picks qualitative best/median/worst cases, renders polar overlay
//! plots, and positions the learned models against the classical geometric
//! estimator.
//!
//! Reports are a single JSON file with a fixed field order. Everything that
//! depends only on the inputs and seeds lives under `payload` and is
//! byte-reproducible; wall-clock timings sit next to it under `timing` so
//! reproducibility checks can compare payloads alone.

mod geo;
mod grid;
mod plot;
mod report;

use thiserror::Error;

pub use geo::{
    compare_to_geometric, full_frame_masks, masks_to_full_frame, GeoComparison, GeoSampleDelta,
};
pub use grid::run_grid;
pub(crate) use grid::{load_split, prepare_modality};
pub use plot::plot_trace;
pub use report::{
    rank_cells, read_report, select_cases, select_cases_in, split_summary, validate_split_hygiene,
    write_report, AggregateMm, CaseSelection, CellKey, CellMetrics, CellSummary, CellTiming,
    ExperimentGrid, ExperimentReport, GridEcho, ReportPayload, ReportTiming, SampleError,
    SplitSummary,
};

use crate::fusionnet::NetError;
use crate::geometry::GeometryError;
use crate::synthgen::SynthError;
use crate::trace::TraceError;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("too few samples: got {got}, need at least {need}")]
    TooFewSamples { got: usize, need: usize },
    #[error("split hygiene violation: {0}")]
    SplitHygiene(String),
    #[error("invalid experiment grid: {0}")]
    Config(String),
    #[error("report file {path}: {msg}")]
    Report { path: String, msg: String },
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error(transparent)]
    Trace(#[from] TraceError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
