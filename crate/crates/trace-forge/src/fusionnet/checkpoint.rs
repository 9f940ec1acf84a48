//! Binary checkpoint format (`.tfck`), all little-endian:
//!
//! ```text
//! magic "TFCK" | u8 version=1 | u8 modality | u8 strategy
//! u32 in_channels | u32 input_px | u32 head_hidden | u32 n_stages | u32*n stages
//! f64 normalizer mean_mm | f64 std_mm
//! f64*C channel means | f64*C channel stds
//! u64 n_params | f64*n params
//! ```

use std::fs;
use std::path::Path;

use super::model::{ChannelStats, EncoderSpec, FusionModel, FusionStrategy, Modality};
use super::NetError;
use crate::trace::TraceNormalizer;

const MAGIC: &[u8; 4] = b"TFCK";
const VERSION: u8 = 1;

fn modality_tag(m: Modality) -> u8 {
    match m {
        Modality::RgbNoseg => 0,
        Modality::GrayDepth => 1,
        Modality::RgbDepth => 2,
    }
}

fn modality_from_tag(t: u8) -> Option<Modality> {
    match t {
        0 => Some(Modality::RgbNoseg),
        1 => Some(Modality::GrayDepth),
        2 => Some(Modality::RgbDepth),
        _ => None,
    }
}

fn strategy_tag(s: FusionStrategy) -> u8 {
    match s {
        FusionStrategy::LateMax => 0,
        FusionStrategy::LateFc => 1,
        FusionStrategy::EarlyMax => 2,
        FusionStrategy::EarlyConv => 3,
    }
}

fn strategy_from_tag(t: u8) -> Option<FusionStrategy> {
    match t {
        0 => Some(FusionStrategy::LateMax),
        1 => Some(FusionStrategy::LateFc),
        2 => Some(FusionStrategy::EarlyMax),
        3 => Some(FusionStrategy::EarlyConv),
        _ => None,
    }
}

pub fn write_checkpoint(model: &FusionModel, path: &Path) -> Result<(), NetError> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    out.push(modality_tag(model.modality));
    out.push(strategy_tag(model.strategy));
    for v in [
        model.spec.in_channels as u32,
        model.spec.input_px as u32,
        model.spec.head_hidden as u32,
        model.spec.stages.len() as u32,
    ] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for &s in &model.spec.stages {
        out.extend_from_slice(&(s as u32).to_le_bytes());
    }
    out.extend_from_slice(&model.normalizer.mean_mm.to_le_bytes());
    out.extend_from_slice(&model.normalizer.std_mm.to_le_bytes());
    for v in model.stats.mean.iter().chain(&model.stats.std) {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.extend_from_slice(&(model.params().len() as u64).to_le_bytes());
    for p in model.params() {
        out.extend_from_slice(&p.to_le_bytes());
    }
    fs::write(path, out)?;
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    off: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], NetError> {
        if self.off + n > self.bytes.len() {
            return Err(NetError::Corrupt {
                path: self.path.display().to_string(),
                msg: format!("truncated at byte {}", self.off),
            });
        }
        let s = &self.bytes[self.off..self.off + n];
        self.off += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, NetError> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32, NetError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, NetError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64, NetError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn fail(&self, msg: impl Into<String>) -> NetError {
        NetError::Corrupt { path: self.path.display().to_string(), msg: msg.into() }
    }
}

pub fn read_checkpoint(path: &Path) -> Result<FusionModel, NetError> {
    let bytes = fs::read(path)?;
    let mut r = Reader { bytes: &bytes, off: 0, path };
    if r.take(4)? != MAGIC {
        return Err(r.fail("bad magic"));
    }
    let version = r.u8()?;
    if version != VERSION {
        return Err(r.fail(format!("unsupported version {version}")));
    }
    let modality = modality_from_tag(r.u8()?).ok_or_else(|| r.fail("unknown modality tag"))?;
    let strategy = strategy_from_tag(r.u8()?).ok_or_else(|| r.fail("unknown strategy tag"))?;
    let in_channels = r.u32()? as usize;
    let input_px = r.u32()? as usize;
    let head_hidden = r.u32()? as usize;
    let n_stages = r.u32()? as usize;
    if n_stages == 0 || n_stages > 64 {
        return Err(r.fail(format!("implausible stage count {n_stages}")));
    }
    let mut stages = Vec::with_capacity(n_stages);
    for _ in 0..n_stages {
        stages.push(r.u32()? as usize);
    }
    let normalizer = TraceNormalizer { mean_mm: r.f64()?, std_mm: r.f64()? };
    let mut mean = Vec::with_capacity(in_channels);
    for _ in 0..in_channels {
        mean.push(r.f64()?);
    }
    let mut std = Vec::with_capacity(in_channels);
    for _ in 0..in_channels {
        std.push(r.f64()?);
    }
    let n_params = r.u64()? as usize;
    let expected = bytes.len() - r.off;
    if n_params * 8 != expected {
        return Err(r.fail(format!(
            "parameter block is {expected} bytes, header implies {}",
            n_params * 8
        )));
    }
    let mut params = Vec::with_capacity(n_params);
    for _ in 0..n_params {
        params.push(r.f64()?);
    }
    let spec = EncoderSpec { in_channels, input_px, stages, head_hidden };
    FusionModel::from_parts(spec, strategy, modality, normalizer, ChannelStats { mean, std }, params)
        .map_err(|e| match e {
            NetError::Config(msg) => r.fail(msg),
            other => other,
        })
}
