//! On-disk dataset layout: `samples/<id>/{views.bin, trace.txt, rig.cfg}`
//! plus a plain-text `manifest.txt` holding the split assignment and a
//! SHA-256 per file. Builds are deterministic: the same seed yields
//! byte-identical trees.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use sha2::{Digest, Sha256};

use super::render::{render_scene, split_eyes};
use super::{mix_seed, sample_scene, MultiViewSample, SceneConfig, SynthError, ViewData};
use crate::geometry::{parse_rig_file, write_rig_file, CameraRig};
use crate::raster::{Mask, Raster8};
use crate::trace::{format_trace, parse_trace, Eye};

const MAGIC: &[u8; 4] = b"TFVB";
const VERSION: u8 = 1;

/// Packs four views into one binary blob: a 21-byte header (magic, version,
/// width, height, view count, channels as little-endian u32s) followed by
/// row-major u8 planes per view: image channels, depth, mask.
pub fn serialize_views(views: &[ViewData; 4]) -> Vec<u8> {
    let w = views[0].depth.width;
    let h = views[0].depth.height;
    let channels = views[0].image.len();
    let mut out = Vec::with_capacity(21 + 4 * (channels + 2) * w * h);
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    for v in [w as u32, h as u32, 4u32, channels as u32] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for view in views {
        for plane in &view.image {
            out.extend_from_slice(&plane.data);
        }
        out.extend_from_slice(&view.depth.data);
        out.extend_from_slice(&view.mask.data);
    }
    out
}

fn parse_views(bytes: &[u8]) -> Result<[ViewData; 4], String> {
    if bytes.len() < 21 {
        return Err("header truncated".into());
    }
    if &bytes[..4] != MAGIC {
        return Err("bad magic".into());
    }
    if bytes[4] != VERSION {
        return Err(format!("unsupported version {}", bytes[4]));
    }
    let rd = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap()) as usize;
    let (w, h, n_views, channels) = (rd(5), rd(9), rd(13), rd(17));
    if n_views != 4 {
        return Err(format!("expected 4 views, header says {n_views}"));
    }
    let plane = w * h;
    let expected = 21 + n_views * (channels + 2) * plane;
    if bytes.len() != expected {
        return Err(format!("blob is {} bytes, header implies {expected}", bytes.len()));
    }
    let mut off = 21;
    let mut take = || {
        let s = bytes[off..off + plane].to_vec();
        off += plane;
        s
    };
    let mut views = Vec::with_capacity(4);
    for _ in 0..4 {
        let image = (0..channels)
            .map(|_| Raster8 { width: w, height: h, data: take() })
            .collect();
        let depth = Raster8 { width: w, height: h, data: take() };
        let mask = Mask { width: w, height: h, data: take() };
        views.push(ViewData { image, depth, mask });
    }
    Ok(views.try_into().unwrap())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "train" => Some(Split::Train),
            "val" => Some(Split::Val),
            "test" => Some(Split::Test),
            _ => None,
        }
    }
}

fn parse_eye(s: &str) -> Option<Eye> {
    match s {
        "left" => Some(Eye::Left),
        "right" => Some(Eye::Right),
        _ => None,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub sample_id: String,
    pub scene_index: usize,
    pub split: Split,
    pub eye: Eye,
    pub scene_seed: u64,
    pub views_sha: String,
    pub trace_sha: String,
    pub rig_sha: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub seed: u64,
    pub n_scenes: usize,
    pub crop_px: u32,
    pub mm_per_px: f64,
    pub channels: usize,
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn format(&self) -> String {
        let mut out = String::new();
        out.push_str("dataset v1\n");
        let _ = writeln!(out, "seed {}", self.seed);
        let _ = writeln!(out, "scenes {}", self.n_scenes);
        let _ = writeln!(out, "crop_px {}", self.crop_px);
        let _ = writeln!(out, "mm_per_px {}", self.mm_per_px);
        let _ = writeln!(out, "channels {}", self.channels);
        let _ = writeln!(out, "samples {}", self.entries.len());
        for e in &self.entries {
            let _ = writeln!(
                out,
                "{} {} {} {} {} {} {} {}",
                e.sample_id,
                e.scene_index,
                e.split.as_str(),
                e.eye.as_str(),
                e.scene_seed,
                e.views_sha,
                e.trace_sha,
                e.rig_sha
            );
        }
        out
    }

    pub fn entries_for(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.split == split)
    }
}

fn sha_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    let digest = hasher.finalize();
    let mut out = String::with_capacity(64);
    for b in digest {
        let _ = write!(out, "{b:02x}");
    }
    out
}

/// Scene-level split: n/10 scenes to val, n/10 to test, the rest to train.
/// Assigning by scene keeps the two mirrored eyes of a scene in one split.
fn assign_splits(n: usize, seed: u64) -> Vec<Split> {
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, 0x5917));
    idx.shuffle(&mut rng);
    let n_val = n / 10;
    let n_test = n / 10;
    let mut out = vec![Split::Train; n];
    for &i in &idx[..n_val] {
        out[i] = Split::Val;
    }
    for &i in &idx[n_val..n_val + n_test] {
        out[i] = Split::Test;
    }
    out
}

/// Renders a scene and splits it into its two eye samples, re-rolling the
/// scene seed a bounded number of times when a draw is unrenderable.
fn generate_scene(
    cfg: &SceneConfig,
    rig: &CameraRig,
    base_seed: u64,
    index: usize,
) -> Result<(u64, MultiViewSample, MultiViewSample), SynthError> {
    let scene_id = format!("s{index:05}");
    let mut scene_seed = mix_seed(base_seed, index as u64);
    for _ in 0..20 {
        let attempt = (|| {
            let scene = sample_scene(cfg, scene_seed)?;
            let capture = render_scene(&scene, rig, cfg.channels)?;
            split_eyes(&capture, &scene, rig, cfg, &scene_id)
        })();
        match attempt {
            Ok((left, right)) => return Ok((scene_seed, left, right)),
            Err(
                SynthError::GenerationFailed(_)
                | SynthError::OutOfFrustum { .. }
                | SynthError::OverlapError { .. },
            ) => scene_seed = mix_seed(scene_seed, 0xA5A5),
            Err(e) => return Err(e),
        }
    }
    Err(SynthError::GenerationFailed(format!(
        "scene {index}: 20 consecutive draws were unrenderable"
    )))
}

fn write_sample(
    root: &Path,
    sample: &MultiViewSample,
) -> Result<(String, String, String), SynthError> {
    let dir = root.join("samples").join(&sample.sample_id);
    fs::create_dir_all(&dir)?;
    let views_bytes = serialize_views(&sample.views);
    let trace_text = format_trace(&sample.truth);
    let rig_text = write_rig_file(&sample.rig.rig, sample.rig.crop_origins.as_ref());
    fs::write(dir.join("views.bin"), &views_bytes)?;
    fs::write(dir.join("trace.txt"), trace_text.as_bytes())?;
    fs::write(dir.join("rig.cfg"), rig_text.as_bytes())?;
    Ok((sha_hex(&views_bytes), sha_hex(trace_text.as_bytes()), sha_hex(rig_text.as_bytes())))
}

/// Generates `n_scenes` two-eye scenes (two samples each) under `root` and
/// writes `manifest.txt`. Scene generation parallelizes across scenes;
/// manifest order is by scene index, so output is seed-deterministic.
pub fn build_dataset(
    root: &Path,
    cfg: &SceneConfig,
    n_scenes: usize,
    seed: u64,
) -> Result<DatasetManifest, SynthError> {
    if n_scenes < 10 {
        return Err(SynthError::GenerationFailed(format!(
            "a dataset needs at least 10 scenes for a non-empty split, got {n_scenes}"
        )));
    }
    let rig = CameraRig::tower(&cfg.tower)?;
    let splits = assign_splits(n_scenes, seed);
    fs::create_dir_all(root.join("samples"))?;

    let per_scene: Vec<(u64, [ManifestEntry; 2])> = (0..n_scenes)
        .into_par_iter()
        .map(|i| {
            let (scene_seed, left, right) = generate_scene(cfg, &rig, seed, i)?;
            let mut entries = Vec::with_capacity(2);
            for sample in [&left, &right] {
                let (views_sha, trace_sha, rig_sha) = write_sample(root, sample)?;
                entries.push(ManifestEntry {
                    sample_id: sample.sample_id.clone(),
                    scene_index: i,
                    split: splits[i],
                    eye: sample.eye,
                    scene_seed,
                    views_sha,
                    trace_sha,
                    rig_sha,
                });
            }
            let [a, b]: [ManifestEntry; 2] = entries.try_into().unwrap();
            Ok((scene_seed, [a, b]))
        })
        .collect::<Result<_, SynthError>>()?;

    let manifest = DatasetManifest {
        seed,
        n_scenes,
        crop_px: cfg.crop_px,
        mm_per_px: cfg.mm_per_px(),
        channels: cfg.channels,
        entries: per_scene.into_iter().flat_map(|(_, pair)| pair).collect(),
    };
    fs::write(root.join("manifest.txt"), manifest.format())?;
    Ok(manifest)
}

fn corrupt(path: &Path, msg: impl Into<String>) -> SynthError {
    SynthError::Corrupt { path: path.display().to_string(), msg: msg.into() }
}

pub fn load_manifest(root: &Path) -> Result<DatasetManifest, SynthError> {
    let path = root.join("manifest.txt");
    let text = fs::read_to_string(&path)?;
    let mut lines = text.lines().enumerate();
    let mut expect = |key: &str| -> Result<String, SynthError> {
        let (ln, line) = lines
            .next()
            .ok_or_else(|| corrupt(&path, format!("missing \"{key}\" line")))?;
        line.strip_prefix(key)
            .and_then(|rest| rest.strip_prefix(' ').or(Some(rest)).map(str::to_owned))
            .ok_or_else(|| corrupt(&path, format!("line {}: expected \"{key} ...\"", ln + 1)))
    };
    if expect("dataset")? != "v1" {
        return Err(corrupt(&path, "unsupported dataset version"));
    }
    let seed = expect("seed")?.parse().map_err(|e| corrupt(&path, format!("seed: {e}")))?;
    let n_scenes =
        expect("scenes")?.parse().map_err(|e| corrupt(&path, format!("scenes: {e}")))?;
    let crop_px =
        expect("crop_px")?.parse().map_err(|e| corrupt(&path, format!("crop_px: {e}")))?;
    let mm_per_px =
        expect("mm_per_px")?.parse().map_err(|e| corrupt(&path, format!("mm_per_px: {e}")))?;
    let channels =
        expect("channels")?.parse().map_err(|e| corrupt(&path, format!("channels: {e}")))?;
    let n_samples: usize =
        expect("samples")?.parse().map_err(|e| corrupt(&path, format!("samples: {e}")))?;

    let mut entries = Vec::with_capacity(n_samples);
    for (ln, line) in lines {
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.len() != 8 {
            return Err(corrupt(&path, format!("line {}: expected 8 fields", ln + 1)));
        }
        entries.push(ManifestEntry {
            sample_id: f[0].to_owned(),
            scene_index: f[1]
                .parse()
                .map_err(|e| corrupt(&path, format!("line {}: scene index: {e}", ln + 1)))?,
            split: Split::parse(f[2])
                .ok_or_else(|| corrupt(&path, format!("line {}: bad split {:?}", ln + 1, f[2])))?,
            eye: parse_eye(f[3])
                .ok_or_else(|| corrupt(&path, format!("line {}: bad eye {:?}", ln + 1, f[3])))?,
            scene_seed: f[4]
                .parse()
                .map_err(|e| corrupt(&path, format!("line {}: scene seed: {e}", ln + 1)))?,
            views_sha: f[5].to_owned(),
            trace_sha: f[6].to_owned(),
            rig_sha: f[7].to_owned(),
        });
    }
    if entries.len() != n_samples {
        return Err(corrupt(
            &path,
            format!("manifest lists {} samples, found {}", n_samples, entries.len()),
        ));
    }
    Ok(DatasetManifest { seed, n_scenes, crop_px, mm_per_px, channels, entries })
}

/// Reads one sample back, verifying every file against its manifest hash.
pub fn load_sample(root: &Path, entry: &ManifestEntry) -> Result<MultiViewSample, SynthError> {
    let dir = root.join("samples").join(&entry.sample_id);
    let views_path = dir.join("views.bin");
    let views_bytes = fs::read(&views_path)?;
    if sha_hex(&views_bytes) != entry.views_sha {
        return Err(corrupt(&views_path, "SHA-256 mismatch"));
    }
    let trace_path = dir.join("trace.txt");
    let trace_text = fs::read_to_string(&trace_path)?;
    if sha_hex(trace_text.as_bytes()) != entry.trace_sha {
        return Err(corrupt(&trace_path, "SHA-256 mismatch"));
    }
    let rig_path = dir.join("rig.cfg");
    let rig_text = fs::read_to_string(&rig_path)?;
    if sha_hex(rig_text.as_bytes()) != entry.rig_sha {
        return Err(corrupt(&rig_path, "SHA-256 mismatch"));
    }

    let views = parse_views(&views_bytes).map_err(|msg| corrupt(&views_path, msg))?;
    let truth = parse_trace(&trace_text)?;
    if truth.eye() != entry.eye {
        return Err(corrupt(&trace_path, "trace eye disagrees with manifest"));
    }
    let rig = parse_rig_file(&rig_text)?;
    Ok(MultiViewSample {
        views,
        truth,
        eye: entry.eye,
        sample_id: entry.sample_id.clone(),
        rng_seed: entry.scene_seed,
        rig,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::TowerConfig;
    use rand::Rng;

    fn tiny_cfg() -> SceneConfig {
        SceneConfig {
            tower: TowerConfig {
                image_size: (224, 224),
                focal_length_px: 640.0,
                ..TowerConfig::default()
            },
            crop_px: 96,
            semi_axis_range_mm: (13.0, 18.0),
            rim_width_range_mm: (2.0, 5.0),
            center_jitter_mm: 2.0,
            ..SceneConfig::default()
        }
    }

    #[test]
    fn view_blob_round_trips() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mk_plane = |rng: &mut ChaCha8Rng| (0..12 * 7).map(|_| rng.gen()).collect::<Vec<u8>>();
        let views: [ViewData; 4] = std::array::from_fn(|_| ViewData {
            image: (0..3)
                .map(|_| Raster8 { width: 12, height: 7, data: mk_plane(&mut rng) })
                .collect(),
            depth: Raster8 { width: 12, height: 7, data: mk_plane(&mut rng) },
            mask: Mask {
                width: 12,
                height: 7,
                data: (0..12 * 7).map(|_| rng.gen_range(0..=1)).collect(),
            },
        });
        let blob = serialize_views(&views);
        assert_eq!(blob.len(), 21 + 4 * 5 * 12 * 7);
        let back = parse_views(&blob).unwrap();
        assert_eq!(views, back);
        assert!(parse_views(&blob[..blob.len() - 1]).is_err());
        let mut bad = blob.clone();
        bad[0] = b'X';
        assert!(parse_views(&bad).is_err());
    }

    #[test]
    fn build_is_deterministic_and_loads_back_verified() {
        let cfg = tiny_cfg();
        let dir_a = tempfile::tempdir().unwrap();
        let dir_b = tempfile::tempdir().unwrap();
        let man_a = build_dataset(dir_a.path(), &cfg, 10, 77).unwrap();
        let man_b = build_dataset(dir_b.path(), &cfg, 10, 77).unwrap();
        assert_eq!(man_a, man_b);
        assert_eq!(
            fs::read(dir_a.path().join("manifest.txt")).unwrap(),
            fs::read(dir_b.path().join("manifest.txt")).unwrap()
        );

        assert_eq!(man_a.entries.len(), 20);
        let count = |s| man_a.entries_for(s).count();
        assert_eq!((count(Split::Train), count(Split::Val), count(Split::Test)), (16, 2, 2));
        // mirrored eyes of one scene always land in the same split
        for pair in man_a.entries.chunks(2) {
            assert_eq!(pair[0].scene_index, pair[1].scene_index);
            assert_eq!(pair[0].split, pair[1].split);
            assert_ne!(pair[0].eye, pair[1].eye);
        }

        let reloaded = load_manifest(dir_a.path()).unwrap();
        assert_eq!(man_a, reloaded);
        for entry in &man_a.entries {
            let sample = load_sample(dir_a.path(), entry).unwrap();
            sample.validate().unwrap();
            assert_eq!(sample.eye, entry.eye);
            // one blob byte-identical across the two builds
            assert_eq!(
                fs::read(dir_a.path().join("samples").join(&entry.sample_id).join("views.bin"))
                    .unwrap(),
                fs::read(dir_b.path().join("samples").join(&entry.sample_id).join("views.bin"))
                    .unwrap()
            );
        }
    }

    #[test]
    fn corrupted_blob_is_rejected_on_load() {
        let cfg = tiny_cfg();
        let dir = tempfile::tempdir().unwrap();
        let manifest = build_dataset(dir.path(), &cfg, 10, 9).unwrap();
        let entry = &manifest.entries[0];
        let path = dir.path().join("samples").join(&entry.sample_id).join("views.bin");
        let mut bytes = fs::read(&path).unwrap();
        let mid = bytes.len() / 2;
        bytes[mid] ^= 0x40;
        fs::write(&path, &bytes).unwrap();
        match load_sample(dir.path(), entry) {
            Err(SynthError::Corrupt { msg, .. }) => assert!(msg.contains("SHA-256")),
            other => panic!("expected corruption error, got {other:?}"),
        }
    }

    #[test]
    fn too_few_scenes_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        match build_dataset(dir.path(), &tiny_cfg(), 9, 1) {
            Err(SynthError::GenerationFailed(msg)) => assert!(msg.contains("10")),
            other => panic!("expected failure, got {other:?}"),
        }
    }
}
