//! Drives the installed binary through real processes: every subcommand runs
//! against a real generated dataset, and exit codes follow the documented
//! 0 / 1 (usage) / 2 (runtime) contract.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;
use trace_forge::evalharness::read_report;
use trace_forge::fusionnet::read_checkpoint;
use trace_forge::synthgen::load_manifest;
use trace_forge::synthgen::load_sample;
use trace_forge::trace::{read_trace, trace_error};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_trace-forge"));
    // keep the ambient environment from leaking a seed into the tests
    c.env_remove("TRACE_FORGE_SEED");
    c
}

fn assert_exit(out: &Output, want: i32, what: &str) {
    assert_eq!(
        out.status.code(),
        Some(want),
        "{what}: expected exit {want}\nstdout:\n{}\nstderr:\n{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn write_mask_png(mask: &trace_forge::raster::Mask, path: &Path) {
    let pixels: Vec<u8> = mask.data.iter().map(|&v| if v != 0 { 255 } else { 0 }).collect();
    image::GrayImage::from_raw(mask.width as u32, mask.height as u32, pixels)
        .expect("mask buffer size")
        .save(path)
        .expect("write mask png");
}

#[test]
fn every_subcommand_works_end_to_end_on_a_generated_dataset() {
    let root = TempDir::new().unwrap();
    let ds = root.path().join("ds");

    // generate, seeded through the environment instead of the flag
    let out = bin()
        .args(["generate", "--scenes", "10", "--preset", "desk", "--channels", "1", "--out"])
        .arg(&ds)
        .env("TRACE_FORGE_SEED", "11")
        .output()
        .unwrap();
    assert_exit(&out, 0, "generate");
    let manifest_text = fs::read_to_string(ds.join("manifest.txt")).unwrap();
    assert!(manifest_text.contains("\nseed 11\n"), "env seed should reach the manifest");

    // the same seed passed as a flag reproduces the dataset byte for byte
    let ds2 = root.path().join("ds2");
    let out = bin()
        .args(["generate", "--scenes", "10", "--preset", "desk", "--channels", "1", "--seed", "11", "--out"])
        .arg(&ds2)
        .output()
        .unwrap();
    assert_exit(&out, 0, "second generate");
    assert_eq!(manifest_text, fs::read_to_string(ds2.join("manifest.txt")).unwrap());

    let out = bin().arg("validate").arg(&ds).output().unwrap();
    assert_exit(&out, 0, "validate");
    assert!(String::from_utf8_lossy(&out.stdout).contains("ok: 20 samples"));

    // export one sample's masks as PNGs and measure them with the classical path
    let manifest = load_manifest(&ds).unwrap();
    let entry = &manifest.entries[0];
    let sample = load_sample(&ds, entry).unwrap();
    let eye = sample.eye.as_str();
    let mask_dir = root.path().join("masks");
    fs::create_dir(&mask_dir).unwrap();
    for (k, view) in sample.views.iter().enumerate() {
        write_mask_png(&view.mask, &mask_dir.join(format!("{eye}_view{k}.png")));
    }
    let rig_path = ds.join("samples").join(&entry.sample_id).join("rig.cfg");
    let geo_dir = root.path().join("geo");
    let out = bin()
        .arg("trace-geometric")
        .arg("--masks")
        .arg(&mask_dir)
        .arg("--rig")
        .arg(&rig_path)
        .arg("--out")
        .arg(&geo_dir)
        .output()
        .unwrap();
    assert_exit(&out, 0, "trace-geometric");
    let geo = read_trace(&geo_dir.join(format!("trace_{eye}.txt"))).unwrap();
    let err = trace_error(&geo, &sample.truth).unwrap();
    eprintln!("geometric vs truth: mean {:.4} mm max {:.4} mm", err.mean_mm, err.max_mm);
    assert!(err.mean_mm < 0.05, "classical estimate off by {:.4} mm", err.mean_mm);

    // with one view missing per eye the command refuses up front
    fs::remove_file(mask_dir.join(format!("{eye}_view3.png"))).unwrap();
    let out = bin()
        .arg("trace-geometric")
        .arg("--masks")
        .arg(&mask_dir)
        .arg("--rig")
        .arg(&rig_path)
        .arg("--out")
        .arg(&geo_dir)
        .output()
        .unwrap();
    assert_exit(&out, 1, "trace-geometric with a missing view");
    assert!(String::from_utf8_lossy(&out.stderr).contains("3 of 4 masks present"));

    // train a small model
    let train_dir = root.path().join("train");
    let out = bin()
        .args(["train", "--input-px", "16", "--epochs", "2", "--batch-size", "4", "--seed", "11"])
        .arg("--data")
        .arg(&ds)
        .arg("--out")
        .arg(&train_dir)
        .output()
        .unwrap();
    assert_exit(&out, 0, "train");
    let ckpt = train_dir.join("model.tfck");
    let model = read_checkpoint(&ckpt).unwrap();
    assert!(model.n_params() > 0);
    assert!(fs::read_to_string(train_dir.join("train_log.txt")).unwrap().contains("best_epoch"));

    // evaluate a one-cell grid and read the report back
    let eval_dir = root.path().join("eval");
    let out = bin()
        .args(["evaluate", "--input-px", "16", "--epochs", "1", "--batch-size", "4", "--seed", "11"])
        .arg("--data")
        .arg(&ds)
        .arg("--out")
        .arg(&eval_dir)
        .output()
        .unwrap();
    assert_exit(&out, 0, "evaluate");
    let report = read_report(&eval_dir.join("report.json")).unwrap();
    assert_eq!(report.payload.ranking.len(), 1);
    let grid_cfg = fs::read_to_string(eval_dir.join("grid.cfg")).unwrap();
    assert!(grid_cfg.starts_with("grid v1\n"));

    // the default plot wants best/median/worst, but the test split has 2 samples
    let plot_dir = root.path().join("plots");
    let out = bin()
        .arg("plot")
        .arg("--checkpoint")
        .arg(&ckpt)
        .arg("--data")
        .arg(&ds)
        .arg("--out")
        .arg(&plot_dir)
        .output()
        .unwrap();
    assert_exit(&out, 2, "plot without enough test samples");
    assert!(String::from_utf8_lossy(&out.stderr).contains("too few samples"));

    // plotting an explicit sample id works
    let out = bin()
        .arg("plot")
        .arg("--checkpoint")
        .arg(&ckpt)
        .arg("--data")
        .arg(&ds)
        .arg("--out")
        .arg(&plot_dir)
        .args(["--sample", &entry.sample_id])
        .output()
        .unwrap();
    assert_exit(&out, 0, "plot --sample");
    let svg = fs::read_to_string(plot_dir.join(format!("trace_{}.svg", entry.sample_id))).unwrap();
    assert!(svg.starts_with("<svg"));
}

#[test]
fn usage_errors_exit_one() {
    let out = bin().arg("--definitely-not-a-flag").output().unwrap();
    assert_exit(&out, 1, "unknown flag");

    let out = bin()
        .args(["generate", "--scenes", "3", "--out", "/tmp/never-created"])
        .output()
        .unwrap();
    assert_exit(&out, 1, "too few scenes");
    assert!(String::from_utf8_lossy(&out.stderr).contains("at least 10"));

    // argument validation runs before any dataset access
    let out = bin()
        .args(["train", "--size", "XL", "--data", "/nonexistent", "--out", "/tmp/never-created"])
        .output()
        .unwrap();
    assert_exit(&out, 1, "unknown model size");
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown size"));

    let out = bin()
        .args([
            "trace-geometric",
            "--masks",
            "/nonexistent",
            "--rig",
            "/nonexistent/rig.cfg",
            "--out",
            "/tmp/never-created",
        ])
        .output()
        .unwrap();
    assert_exit(&out, 1, "missing mask directory");
}

#[test]
fn help_and_version_exit_zero() {
    let out = bin().arg("--help").output().unwrap();
    assert_exit(&out, 0, "--help");
    assert!(String::from_utf8_lossy(&out.stdout).contains("Usage"));

    let out = bin().arg("--version").output().unwrap();
    assert_exit(&out, 0, "--version");
}

#[test]
fn a_corrupted_dataset_fails_validation() {
    let root = TempDir::new().unwrap();
    let ds = root.path().join("ds");
    let out = bin()
        .args(["generate", "--scenes", "10", "--preset", "compact", "--seed", "9", "--out"])
        .arg(&ds)
        .output()
        .unwrap();
    assert_exit(&out, 0, "generate");
    let out = bin().arg("validate").arg(&ds).output().unwrap();
    assert_exit(&out, 0, "validate intact");

    let manifest = load_manifest(&ds).unwrap();
    let victim = ds.join("samples").join(&manifest.entries[0].sample_id).join("views.bin");
    let bytes = fs::read(&victim).unwrap();
    fs::write(&victim, &bytes[..16]).unwrap();
    let out = bin().arg("validate").arg(&ds).output().unwrap();
    assert_exit(&out, 2, "validate truncated file");
    assert!(!out.stderr.is_empty());
}
