//! Command-line entry point: dataset generation, the classical estimator,
//! training, grid evaluation, plotting and dataset validation.
//!
//! Conventions shared by every subcommand:
//! - exit 0 on success, 1 on a usage/input problem, 2 on a runtime failure;
//! - diagnostics go to standard error, results to files or standard output;
//! - nothing is written outside the subcommand's `--out` directory;
//! - `--seed` defaults to 42 and can also come from `TRACE_FORGE_SEED`;
//! - given identical inputs and seed, outputs are byte-identical (wall-clock
//!   timings in reports aside).

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{ArgAction, Args, Parser, Subcommand};

use crate::evalharness::{
    load_split, masks_to_full_frame, plot_trace, prepare_modality, run_grid, split_summary,
    write_report, EvalError, ExperimentGrid,
};
use crate::fusionnet::{
    read_checkpoint, train, write_checkpoint, EncoderSpec, FusionModel, FusionStrategy, LossKind,
    Modality, ModelSize, NetError, TrainConfig,
};
use crate::geometry::{
    geometric_trace, parse_rig_file, view_coverage, GeometricTraceOptions, GeometryError, RigFile,
};
use crate::raster::Mask;
use crate::synthgen::{
    build_dataset, load_manifest, load_sample, DatasetManifest, SceneConfig, Split, SynthError,
};
use crate::trace::{fit_normalizer, trace_error, write_trace, Eye, RadialTrace, TraceError};

#[derive(Debug, Parser)]
#[command(
    name = "trace-forge",
    version,
    about = "Eyeglass-frame trace measurement from calibrated multi-view captures"
)]
struct Cli {
    /// Master seed (dataset generation, model init, training shuffles).
    #[arg(long, global = true, env = "TRACE_FORGE_SEED", default_value_t = 42)]
    seed: u64,
    /// Cap on worker threads for scene generation (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// -v for progress, -vv for per-epoch detail (always on standard error).
    #[arg(short, long, global = true, action = ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic dataset with exact ground-truth traces.
    Generate(GenerateArgs),
    /// Re-verify every file of a generated dataset against its manifest.
    Validate(ValidateArgs),
    /// Run the classical (non-learned) estimator on mask images.
    TraceGeometric(TraceGeometricArgs),
    /// Train one fusion model and save a checkpoint.
    Train(TrainArgs),
    /// Train and score a modality × size × fusion grid; write a report.
    Evaluate(EvaluateArgs),
    /// Render polar overlay plots (prediction vs truth) from a checkpoint.
    Plot(PlotArgs),
}

#[derive(Debug, Args)]
struct GenerateArgs {
    /// Two-eye scenes to generate; each yields two per-eye samples.
    #[arg(long, default_value_t = 20)]
    scenes: usize,
    /// Capture scale: desk (0.25 mm/px, 256 px crops), compact (0.5 mm/px,
    /// 128 px), full (0.357 mm/px, 224 px).
    #[arg(long, default_value = "desk", value_parser = ["desk", "compact", "full"])]
    preset: String,
    /// Image channels stored per view: 1 (gray) or 3 (RGB).
    #[arg(long, default_value_t = 3)]
    channels: usize,
    /// Dataset directory to create.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct ValidateArgs {
    /// Dataset directory (the one containing manifest.txt).
    dir: PathBuf,
}

#[derive(Debug, Args)]
struct TraceGeometricArgs {
    /// Directory with binary mask images named {right,left}_view{0..3}.png.
    #[arg(long)]
    masks: PathBuf,
    /// Rig calibration file (rig.cfg format, crop origins honoured).
    #[arg(long)]
    rig: PathBuf,
    /// Output directory for trace_{right,left}.txt.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// Dataset directory.
    #[arg(long)]
    data: PathBuf,
    /// Output directory for model.tfck and train_log.txt.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = "gray_depth")]
    modality: String,
    #[arg(long, default_value = "S")]
    size: String,
    #[arg(long, default_value = "late_max")]
    fusion: String,
    /// Square input side fed to the encoder; must divide the crop size.
    #[arg(long, default_value_t = 32)]
    input_px: usize,
    #[arg(long, default_value_t = 30)]
    epochs: usize,
    #[arg(long, default_value_t = 8)]
    batch_size: usize,
    #[arg(long, default_value_t = 1e-4)]
    learning_rate: f64,
    /// Training loss: mse or l1.
    #[arg(long, default_value = "mse")]
    loss: String,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    /// Dataset directory.
    #[arg(long)]
    data: PathBuf,
    /// Grid config file ("grid v1" format); flags below override it.
    #[arg(long)]
    grid: Option<PathBuf>,
    /// Output directory for report.json and grid.cfg.
    #[arg(long)]
    out: PathBuf,
    /// Comma-separated modality axis (rgb_noseg,gray_depth,rgb_depth).
    #[arg(long)]
    modalities: Option<String>,
    /// Comma-separated size axis (S,M,L).
    #[arg(long)]
    sizes: Option<String>,
    /// Comma-separated fusion axis (late_max,late_fc,early_max,early_conv).
    #[arg(long)]
    fusions: Option<String>,
    /// Comma-separated training seeds; defaults to the global --seed.
    #[arg(long)]
    seeds: Option<String>,
    #[arg(long)]
    input_px: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    loss: Option<String>,
}

#[derive(Debug, Args)]
struct PlotArgs {
    /// Model checkpoint (.tfck).
    #[arg(long)]
    checkpoint: PathBuf,
    /// Dataset directory.
    #[arg(long)]
    data: PathBuf,
    /// Output directory for the SVG files.
    #[arg(long)]
    out: PathBuf,
    /// Plot these sample ids instead of the test split's
    /// best/median/worst cases. May be repeated.
    #[arg(long)]
    sample: Vec<String>,
}

/// Usage problems exit 1, runtime failures exit 2.
#[derive(Debug)]
enum CliError {
    Usage(String),
    Runtime(String),
}

macro_rules! runtime_from {
    ($($ty:ty),*) => {$(
        impl From<$ty> for CliError {
            fn from(e: $ty) -> Self {
                CliError::Runtime(e.to_string())
            }
        }
    )*};
}
runtime_from!(EvalError, NetError, SynthError, GeometryError, TraceError, std::io::Error);

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

/// Parses argv and runs the selected subcommand; returns the process exit
/// code. Kept separate from `main` so it is testable in-process.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return code;
        }
    };

    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .try_init();
    if let Some(jobs) = cli.jobs {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(jobs.max(1)).build_global();
    }

    let result = match cli.cmd {
        Command::Generate(a) => cmd_generate(cli.seed, a),
        Command::Validate(a) => cmd_validate(a),
        Command::TraceGeometric(a) => cmd_trace_geometric(a),
        Command::Train(a) => cmd_train(cli.seed, a),
        Command::Evaluate(a) => cmd_evaluate(cli.seed, a),
        Command::Plot(a) => cmd_plot(a),
    };
    match result {
        Ok(()) => 0,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            1
        }
        Err(CliError::Runtime(msg)) => {
            eprintln!("error: {msg}");
            2
        }
    }
}

fn preset_config(name: &str) -> SceneConfig {
    match name {
        "compact" => SceneConfig::compact(),
        "full" => SceneConfig::full_scale(),
        _ => SceneConfig::default(),
    }
}

fn require_manifest(data: &Path) -> Result<(), CliError> {
    if !data.join("manifest.txt").is_file() {
        return Err(usage(format!("no manifest.txt under {}", data.display())));
    }
    Ok(())
}

fn split_counts(manifest: &DatasetManifest) -> (usize, usize, usize) {
    (
        manifest.entries_for(Split::Train).count(),
        manifest.entries_for(Split::Val).count(),
        manifest.entries_for(Split::Test).count(),
    )
}

fn cmd_generate(seed: u64, a: GenerateArgs) -> Result<(), CliError> {
    if a.scenes < 10 {
        return Err(usage(format!("--scenes must be at least 10 (got {})", a.scenes)));
    }
    if a.channels != 1 && a.channels != 3 {
        return Err(usage(format!("--channels must be 1 or 3 (got {})", a.channels)));
    }
    let mut cfg = preset_config(&a.preset);
    cfg.channels = a.channels;
    fs::create_dir_all(&a.out)?;
    let manifest = build_dataset(&a.out, &cfg, a.scenes, seed)?;
    let (n_train, n_val, n_test) = split_counts(&manifest);
    println!(
        "dataset seed {} scenes {} samples {} (train {n_train} / val {n_val} / test {n_test})",
        manifest.seed,
        manifest.n_scenes,
        manifest.entries.len()
    );
    println!("manifest {}", a.out.join("manifest.txt").display());
    Ok(())
}

fn cmd_validate(a: ValidateArgs) -> Result<(), CliError> {
    require_manifest(&a.dir)?;
    let manifest = load_manifest(&a.dir)?;
    split_summary(&manifest)?;
    for entry in &manifest.entries {
        let sample = load_sample(&a.dir, entry)?;
        sample.validate()?;
    }
    let (n_train, n_val, n_test) = split_counts(&manifest);
    println!(
        "ok: {} samples verified ({} scenes, splits {n_train}/{n_val}/{n_test})",
        manifest.entries.len(),
        manifest.n_scenes
    );
    Ok(())
}

fn load_mask_png(path: &Path) -> Result<Mask, CliError> {
    let img = image::open(path)
        .map_err(|e| usage(format!("{}: {e}", path.display())))?
        .into_luma8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    Ok(Mask {
        width: w,
        height: h,
        data: img.into_raw().into_iter().map(|v| (v >= 128) as u8).collect(),
    })
}

/// Prints why the classical estimator could not measure: per-view mask
/// sizes and the angular spans where fewer than two views see the edge.
fn print_coverage_diagnostics(masks: &[Mask; 4], rig: &RigFile) {
    for (i, m) in masks.iter().enumerate() {
        eprintln!("view {i}: {} mask pixels in a {}x{} frame", m.area(), m.width, m.height);
    }
    const N: usize = 600;
    match view_coverage(masks, &rig.rig, N) {
        Ok(cov) => {
            let ok = cov.iter().filter(|&&c| c >= 2).count();
            eprintln!("angle coverage: {ok}/{N} angles see the edge in >= 2 views");
            let mut start: Option<usize> = None;
            for j in 0..=N {
                let bad = j < N && cov[j] < 2;
                match (start, bad) {
                    (None, true) => start = Some(j),
                    (Some(s), false) => {
                        eprintln!(
                            "  angles {:.1}..{:.1} deg: fewer than 2 views",
                            s as f64 * 360.0 / N as f64,
                            j as f64 * 360.0 / N as f64
                        );
                        start = None;
                    }
                    _ => {}
                }
            }
        }
        Err(e) => eprintln!("angle coverage unavailable: {e}"),
    }
}

fn cmd_trace_geometric(a: TraceGeometricArgs) -> Result<(), CliError> {
    if !a.masks.is_dir() {
        return Err(usage(format!("mask directory {} does not exist", a.masks.display())));
    }
    if !a.rig.is_file() {
        return Err(usage(format!("rig file {} does not exist", a.rig.display())));
    }
    let rig_text = fs::read_to_string(&a.rig)?;
    let rig = parse_rig_file(&rig_text)
        .map_err(|e| usage(format!("{}: {e}", a.rig.display())))?;
    fs::create_dir_all(&a.out)?;

    let mut wrote = 0usize;
    for eye in [Eye::Right, Eye::Left] {
        let paths: Vec<PathBuf> = (0..4)
            .map(|k| a.masks.join(format!("{}_view{k}.png", eye.as_str())))
            .collect();
        let present = paths.iter().filter(|p| p.is_file()).count();
        if present == 0 {
            continue;
        }
        if present < 4 {
            let missing: Vec<String> = paths
                .iter()
                .filter(|p| !p.is_file())
                .map(|p| p.display().to_string())
                .collect();
            return Err(usage(format!(
                "{} eye: {present} of 4 masks present, missing {}",
                eye.as_str(),
                missing.join(", ")
            )));
        }
        let mut masks = Vec::with_capacity(4);
        for p in &paths {
            masks.push(load_mask_png(p)?);
        }
        let masks: [Mask; 4] = masks.try_into().expect("four masks");
        let full = masks_to_full_frame(&masks, &rig).map_err(|e| usage(e.to_string()))?;
        let opts = GeometricTraceOptions { eye, ..GeometricTraceOptions::default() };
        let trace = match geometric_trace(&full, &rig.rig, &opts) {
            Ok(t) => t,
            Err(e @ GeometryError::DegenerateGeometry(_)) => {
                eprintln!("{} eye: {e}", eye.as_str());
                print_coverage_diagnostics(&full, &rig);
                return Err(CliError::Runtime(e.to_string()));
            }
            Err(e) => return Err(e.into()),
        };
        let out_path = a.out.join(format!("trace_{}.txt", eye.as_str()));
        write_trace(&trace, &out_path)?;
        let c = trace.center_2d();
        println!(
            "{} {} points, center ({:.2}, {:.2}) mm -> {}",
            eye.as_str(),
            trace.radii_mm().len(),
            c.x,
            c.y,
            out_path.display()
        );
        wrote += 1;
    }
    if wrote == 0 {
        return Err(usage(format!(
            "no mask images found: expected right_view0..3.png and/or left_view0..3.png in {}",
            a.masks.display()
        )));
    }
    Ok(())
}

struct ParsedCell {
    modality: Modality,
    size: ModelSize,
    fusion: FusionStrategy,
    loss: LossKind,
}

fn parse_cell(modality: &str, size: &str, fusion: &str, loss: &str) -> Result<ParsedCell, CliError> {
    Ok(ParsedCell {
        modality: Modality::parse(modality)
            .ok_or_else(|| usage(format!("unknown modality {modality:?}")))?,
        size: ModelSize::parse(size).ok_or_else(|| usage(format!("unknown size {size:?}")))?,
        fusion: FusionStrategy::parse(fusion)
            .ok_or_else(|| usage(format!("unknown fusion {fusion:?}")))?,
        loss: LossKind::parse(loss).ok_or_else(|| usage(format!("unknown loss {loss:?}")))?,
    })
}

fn cmd_train(seed: u64, a: TrainArgs) -> Result<(), CliError> {
    let cell = parse_cell(&a.modality, &a.size, &a.fusion, &a.loss)?;
    require_manifest(&a.data)?;
    let manifest = load_manifest(&a.data)?;
    split_summary(&manifest)?;
    let train_samples = load_split(&a.data, &manifest, Split::Train)?;
    let val_samples = load_split(&a.data, &manifest, Split::Val)?;
    let test_samples = load_split(&a.data, &manifest, Split::Test)?;

    let truths: Vec<RadialTrace> = train_samples.iter().map(|s| s.truth.clone()).collect();
    let norm = fit_normalizer(&truths)?;
    let md = prepare_modality(
        cell.modality,
        a.input_px,
        &norm,
        &train_samples,
        &val_samples,
        &test_samples,
    )?;

    let spec = EncoderSpec::sized(cell.size, cell.modality, a.input_px);
    let mut model =
        FusionModel::init(spec, cell.fusion, cell.modality, norm, md.stats.clone(), seed)?;
    let cfg = TrainConfig {
        batch_size: a.batch_size,
        learning_rate: a.learning_rate,
        epochs: a.epochs,
        seed,
        loss: cell.loss,
        ..TrainConfig::default()
    };
    let report = train(&mut model, &md.train, &md.val, &cfg)?;

    fs::create_dir_all(&a.out)?;
    let ckpt = a.out.join("model.tfck");
    write_checkpoint(&model, &ckpt)?;
    let mut log = String::new();
    for h in &report.history {
        log.push_str(&format!(
            "epoch {} train_loss {:.6} val_mm {:.6}\n",
            h.epoch, h.train_loss, h.val_mean_mm
        ));
    }
    log.push_str(&format!(
        "best_epoch {} best_val_mm {:.6}\n",
        report.best_epoch, report.best_val_mean_mm
    ));
    fs::write(a.out.join("train_log.txt"), log)?;

    println!("checkpoint {}", ckpt.display());
    println!(
        "best val {:.4} mm at epoch {} ({} params)",
        report.best_val_mean_mm,
        report.best_epoch,
        model.n_params()
    );
    if !md.test.is_empty() {
        let test_mm = crate::fusionnet::mean_error_mm(&model, &md.test)?;
        println!("test mean {test_mm:.4} mm over {} samples", md.test.len());
    }
    Ok(())
}

fn parse_axis<T>(
    s: &str,
    kind: &str,
    parse: impl Fn(&str) -> Option<T>,
) -> Result<Vec<T>, CliError> {
    s.split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(|t| parse(t).ok_or_else(|| usage(format!("unknown {kind} {t:?}"))))
        .collect()
}

fn cmd_evaluate(seed: u64, a: EvaluateArgs) -> Result<(), CliError> {
    require_manifest(&a.data)?;
    let mut grid = match &a.grid {
        Some(path) => {
            if !path.is_file() {
                return Err(usage(format!("grid file {} does not exist", path.display())));
            }
            ExperimentGrid::from_config_text(&fs::read_to_string(path)?, a.data.clone())
                .map_err(|e| usage(format!("{}: {e}", path.display())))?
        }
        None => {
            let mut g = ExperimentGrid::single(a.data.clone());
            g.seeds = vec![seed];
            g
        }
    };
    if let Some(s) = &a.modalities {
        grid.modalities = parse_axis(s, "modality", Modality::parse)?;
    }
    if let Some(s) = &a.sizes {
        grid.sizes = parse_axis(s, "size", ModelSize::parse)?;
    }
    if let Some(s) = &a.fusions {
        grid.fusions = parse_axis(s, "fusion", FusionStrategy::parse)?;
    }
    if let Some(s) = &a.seeds {
        grid.seeds = parse_axis(s, "seed", |t| t.parse().ok())?;
    }
    if let Some(v) = a.input_px {
        grid.input_px = v;
    }
    if let Some(v) = a.epochs {
        grid.train.epochs = v;
    }
    if let Some(v) = a.batch_size {
        grid.train.batch_size = v;
    }
    if let Some(v) = a.learning_rate {
        grid.train.learning_rate = v;
    }
    if let Some(s) = &a.loss {
        grid.train.loss = LossKind::parse(s).ok_or_else(|| usage(format!("unknown loss {s:?}")))?;
    }
    grid.validate().map_err(|e| usage(e.to_string()))?;

    fs::create_dir_all(&a.out)?;
    let report = run_grid(&grid)?;
    let report_path = a.out.join("report.json");
    write_report(&report, &report_path)?;
    fs::write(a.out.join("grid.cfg"), grid.to_config_text())?;

    println!("report {}", report_path.display());
    for (rank, label) in report.payload.ranking.iter().enumerate() {
        let cell = report
            .payload
            .cells
            .iter()
            .find(|c| &c.key.label() == label)
            .expect("ranked cell exists");
        let m = cell.metrics.as_ref().expect("ranked cell has metrics");
        println!(
            "{} {label} mean {:.4} mm max {:.4} mm frac<1mm {:.4}",
            rank + 1,
            m.pooled.mean_mm,
            m.pooled.max_mm,
            m.frac_under_1mm
        );
    }
    for cell in report.payload.cells.iter().filter(|c| c.metrics.is_none()) {
        println!("failed {} ({})", cell.key.label(), cell.error.as_deref().unwrap_or("?"));
    }
    Ok(())
}

fn cmd_plot(a: PlotArgs) -> Result<(), CliError> {
    if !a.checkpoint.is_file() {
        return Err(usage(format!("checkpoint {} does not exist", a.checkpoint.display())));
    }
    require_manifest(&a.data)?;
    let model = read_checkpoint(&a.checkpoint)?;
    let manifest = load_manifest(&a.data)?;
    fs::create_dir_all(&a.out)?;

    if !a.sample.is_empty() {
        for id in &a.sample {
            let entry = manifest
                .entries
                .iter()
                .find(|e| &e.sample_id == id)
                .ok_or_else(|| usage(format!("sample {id:?} is not in the manifest")))?;
            let sample = load_sample(&a.data, entry)?;
            let pred = model.predict_trace(&sample)?;
            let path = a.out.join(format!("trace_{id}.svg"));
            plot_trace(&pred, &sample.truth, &path)?;
            let mean = trace_error(&pred, &sample.truth)?.mean_mm;
            println!("{id} mean {mean:.4} mm -> {}", path.display());
        }
        return Ok(());
    }

    // default: best / median / worst of the test split by per-sample mean
    let entries: Vec<_> = manifest.entries_for(Split::Test).collect();
    if entries.len() < 3 {
        return Err(EvalError::TooFewSamples { got: entries.len(), need: 3 }.into());
    }
    let mut scored: Vec<(f64, String, RadialTrace, RadialTrace)> = Vec::new();
    for entry in entries {
        let sample = load_sample(&a.data, entry)?;
        let pred = model.predict_trace(&sample)?;
        let mean = trace_error(&pred, &sample.truth)?.mean_mm;
        scored.push((mean, entry.sample_id.clone(), pred, sample.truth));
    }
    scored.sort_by(|x, y| x.0.total_cmp(&y.0).then_with(|| x.1.cmp(&y.1)));
    let n = scored.len();
    for (tag, idx) in [("best", 0), ("median", n / 2), ("worst", n - 1)] {
        let (mean, id, pred, truth) = &scored[idx];
        let path = a.out.join(format!("{tag}_{id}.svg"));
        plot_trace(pred, truth, &path)?;
        println!("{tag} {id} mean {mean:.4} mm -> {}", path.display());
    }
    Ok(())
}
