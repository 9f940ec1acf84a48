//! Model assembly: input tensors, encoder/fusion/head wiring, loss, and the
//! full-model backward pass over a single flat parameter vector.

use log::warn;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::tensor::{
    conv_backward, conv_forward, gap_backward, gap_forward, linear_backward, linear_forward,
    max_views_backward, max_views_forward, silu, silu_backward, ConvShape, FeatureMap,
};
use super::NetError;
use crate::raster::Plane;
use crate::synthgen::MultiViewSample;
use crate::trace::{RadialTrace, TraceNormalizer, TRACE_POINTS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Modality {
    /// 3 channels: RGB with the background left in (no mask, no depth).
    RgbNoseg,
    /// 2 channels: luminance + depth, both masked.
    GrayDepth,
    /// 4 channels: RGB + depth, all masked.
    RgbDepth,
}

impl Modality {
    pub fn channels(self) -> usize {
        match self {
            Modality::RgbNoseg => 3,
            Modality::GrayDepth => 2,
            Modality::RgbDepth => 4,
        }
    }

    pub fn applies_mask(self) -> bool {
        !matches!(self, Modality::RgbNoseg)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Modality::RgbNoseg => "rgb_noseg",
            Modality::GrayDepth => "gray_depth",
            Modality::RgbDepth => "rgb_depth",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "rgb_noseg" => Some(Modality::RgbNoseg),
            "gray_depth" => Some(Modality::GrayDepth),
            "rgb_depth" => Some(Modality::RgbDepth),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ModelSize {
    S,
    M,
    L,
}

impl ModelSize {
    pub fn width_multiplier(self) -> f64 {
        match self {
            ModelSize::S => 1.0,
            ModelSize::M => 1.5,
            ModelSize::L => 2.0,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ModelSize::S => "S",
            ModelSize::M => "M",
            ModelSize::L => "L",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "S" | "s" => Some(ModelSize::S),
            "M" | "m" => Some(ModelSize::M),
            "L" | "l" => Some(ModelSize::L),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FusionStrategy {
    /// Elementwise max over the four pooled feature vectors.
    LateMax,
    /// Fully-connected combiner over the concatenated pooled vectors.
    LateFc,
    /// Elementwise max over feature maps after the penultimate conv stage.
    EarlyMax,
    /// Learned 1x1 convolution over the view-stacked channel axis after the
    /// penultimate conv stage.
    EarlyConv,
}

impl FusionStrategy {
    pub fn is_early(self) -> bool {
        matches!(self, FusionStrategy::EarlyMax | FusionStrategy::EarlyConv)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            FusionStrategy::LateMax => "late_max",
            FusionStrategy::LateFc => "late_fc",
            FusionStrategy::EarlyMax => "early_max",
            FusionStrategy::EarlyConv => "early_conv",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "late_max" => Some(FusionStrategy::LateMax),
            "late_fc" => Some(FusionStrategy::LateFc),
            "early_max" => Some(FusionStrategy::EarlyMax),
            "early_conv" => Some(FusionStrategy::EarlyConv),
            _ => None,
        }
    }

    pub fn all() -> [FusionStrategy; 4] {
        [
            FusionStrategy::LateMax,
            FusionStrategy::LateFc,
            FusionStrategy::EarlyMax,
            FusionStrategy::EarlyConv,
        ]
    }
}

/// Encoder layout: a chain of 3x3 stride-2 convolutions with swish
/// activations, global average pooling, and a two-layer head.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncoderSpec {
    pub in_channels: usize,
    pub input_px: usize,
    /// Output channels per stage; the last entry is the feature dimension.
    pub stages: Vec<usize>,
    pub head_hidden: usize,
}

impl EncoderSpec {
    /// Default five-stage encoder; M and L widen every stage by 1.5x / 2x.
    pub fn sized(size: ModelSize, modality: Modality, input_px: usize) -> Self {
        let m = size.width_multiplier();
        EncoderSpec {
            in_channels: modality.channels(),
            input_px,
            stages: [16, 32, 64, 96, 128].iter().map(|&c| (c as f64 * m).round() as usize).collect(),
            head_hidden: 256,
        }
    }

    pub fn feature_dim(&self) -> usize {
        *self.stages.last().expect("at least one stage")
    }
}

/// Per-channel standardization statistics, fitted on the training split.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl ChannelStats {
    pub fn identity(channels: usize) -> Self {
        ChannelStats { mean: vec![0.0; channels], std: vec![1.0; channels] }
    }

    /// Population statistics over every pixel of every view of every sample.
    /// A constant channel gets std 1 so normalization stays defined.
    pub fn fit(tensors: &[[InputTensor; 4]]) -> Result<Self, NetError> {
        let channels = tensors
            .first()
            .map(|t| t[0].channels)
            .ok_or_else(|| NetError::Config("cannot fit stats on an empty set".into()))?;
        let mut sum = vec![0.0; channels];
        let mut sumsq = vec![0.0; channels];
        let mut count = 0usize;
        for views in tensors {
            for t in views {
                let px2 = t.px * t.px;
                for c in 0..channels {
                    for &v in &t.data[c * px2..(c + 1) * px2] {
                        sum[c] += v;
                        sumsq[c] += v * v;
                    }
                }
                count += px2;
            }
        }
        let n = count as f64;
        let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
        let std = sumsq
            .iter()
            .zip(&mean)
            .map(|(sq, m)| {
                let var = (sq / n - m * m).max(0.0);
                if var.sqrt() < 1e-9 {
                    1.0
                } else {
                    var.sqrt()
                }
            })
            .collect();
        Ok(ChannelStats { mean, std })
    }
}

/// One view's network input: CHW scalars, already masked and normalized as
/// the modality demands.
#[derive(Debug, Clone, PartialEq)]
pub struct InputTensor {
    pub modality: Modality,
    pub mask_applied: bool,
    pub channels: usize,
    pub px: usize,
    pub data: Vec<f64>,
}

fn luminance(planes: &[Plane]) -> Plane {
    let mut out = Plane::zeros(planes[0].width, planes[0].height);
    for i in 0..out.data.len() {
        out.data[i] =
            0.299 * planes[0].data[i] + 0.587 * planes[1].data[i] + 0.114 * planes[2].data[i];
    }
    out
}

/// Builds unnormalized tensors: channel selection, masking, box downsample
/// to `input_px`. Masking happens at full resolution, so background pixels
/// contribute exactly zero regardless of their raw value.
pub fn build_raw_input(
    sample: &MultiViewSample,
    modality: Modality,
    input_px: usize,
) -> Result<[InputTensor; 4], NetError> {
    let side = sample.views[0].depth.width;
    if sample.views[0].depth.height != side {
        return Err(NetError::ShapeMismatch(format!(
            "views must be square, got {side}x{}",
            sample.views[0].depth.height
        )));
    }
    if input_px == 0 || side % input_px != 0 {
        return Err(NetError::ShapeMismatch(format!(
            "view side {side} is not a multiple of input size {input_px}"
        )));
    }
    let factor = side / input_px;
    let img_channels = sample.views[0].image.len();
    if modality != Modality::GrayDepth && img_channels != 3 {
        return Err(NetError::ModalityMismatch {
            modality: modality.as_str(),
            needed: 3,
            got: img_channels,
        });
    }

    let mut out = Vec::with_capacity(4);
    for (vi, view) in sample.views.iter().enumerate() {
        if view.depth.width != side || view.depth.height != side {
            return Err(NetError::ShapeMismatch(format!("view {vi} differs in size")));
        }
        let img: Vec<Plane> = view.image.iter().map(|r| r.to_plane(255.0)).collect();
        let depth = view.depth.to_plane(255.0);
        let mut planes: Vec<Plane> = match modality {
            Modality::RgbNoseg => img,
            Modality::RgbDepth => img.into_iter().chain([depth]).collect(),
            Modality::GrayDepth => {
                let gray = if img_channels == 3 { luminance(&img) } else { img[0].clone() };
                vec![gray, depth]
            }
        };
        if modality.applies_mask() {
            if view.mask.area() == 0 {
                warn!("degenerate input: view {vi} of {} has an empty mask", sample.sample_id);
            }
            for p in &mut planes {
                for (v, &m) in p.data.iter_mut().zip(&view.mask.data) {
                    *v *= m as f32;
                }
            }
        }
        let mut data = Vec::with_capacity(planes.len() * input_px * input_px);
        for p in &planes {
            data.extend(p.downsample_box(factor).data.iter().map(|&v| v as f64));
        }
        out.push(InputTensor {
            modality,
            mask_applied: modality.applies_mask(),
            channels: planes.len(),
            px: input_px,
            data,
        });
    }
    Ok(out.try_into().expect("four views"))
}

/// Raw tensors standardized per channel with training-set statistics.
pub fn build_input(
    sample: &MultiViewSample,
    modality: Modality,
    stats: &ChannelStats,
    input_px: usize,
) -> Result<[InputTensor; 4], NetError> {
    let mut tensors = build_raw_input(sample, modality, input_px)?;
    for t in &mut tensors {
        normalize_tensor(t, stats)?;
    }
    Ok(tensors)
}

pub(crate) fn normalize_tensor(t: &mut InputTensor, stats: &ChannelStats) -> Result<(), NetError> {
    if stats.mean.len() != t.channels || stats.std.len() != t.channels {
        return Err(NetError::ShapeMismatch(format!(
            "stats cover {} channels, tensor has {}",
            stats.mean.len(),
            t.channels
        )));
    }
    let px2 = t.px * t.px;
    for c in 0..t.channels {
        let (m, s) = (stats.mean[c], stats.std[c]);
        for v in &mut t.data[c * px2..(c + 1) * px2] {
            *v = (*v - m) / s;
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    Mse,
    L1,
}

impl LossKind {
    pub fn as_str(self) -> &'static str {
        match self {
            LossKind::Mse => "mse",
            LossKind::L1 => "l1",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "mse" => Some(LossKind::Mse),
            "l1" => Some(LossKind::L1),
            _ => None,
        }
    }
}

pub(crate) fn loss_and_grad(pred: &[f64], target: &[f64], kind: LossKind) -> (f64, Vec<f64>) {
    let n = pred.len() as f64;
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(pred.len());
    for (&p, &t) in pred.iter().zip(target) {
        let d = p - t;
        match kind {
            LossKind::Mse => {
                loss += d * d;
                grad.push(2.0 * d / n);
            }
            LossKind::L1 => {
                loss += d.abs();
                grad.push(if d == 0.0 { 0.0 } else { d.signum() / n });
            }
        }
    }
    (loss / n, grad)
}

/// Mean squared error between a prediction and the normalized target trace.
pub fn loss(pred: &[f64], target: &RadialTrace, norm: &TraceNormalizer) -> Result<f64, NetError> {
    let t = norm.normalize(target)?;
    if pred.len() != t.len() {
        return Err(NetError::ShapeMismatch(format!(
            "prediction has {} values, target {}",
            pred.len(),
            t.len()
        )));
    }
    Ok(loss_and_grad(pred, &t, LossKind::Mse).0)
}

/// Byte offsets of every parameter block inside the flat vector. Each block
/// stores weights immediately followed by biases.
#[derive(Debug, Clone, PartialEq, Eq)]
struct Layout {
    convs: Vec<(usize, usize, ConvShape)>,
    comb_linear: Option<(usize, usize)>,
    comb_conv: Option<(usize, usize, ConvShape)>,
    head1: (usize, usize),
    head2: (usize, usize),
    n_params: usize,
}

fn build_layout(spec: &EncoderSpec, strategy: FusionStrategy) -> Layout {
    let mut off = 0;
    let mut alloc = |n: usize| {
        let o = off;
        off += n;
        o
    };
    let mut convs = Vec::with_capacity(spec.stages.len());
    let mut in_c = spec.in_channels;
    for &out_c in &spec.stages {
        let shape = ConvShape { in_c, out_c, k: 3, stride: 2, pad: 1 };
        let w = alloc(shape.n_weights());
        let b = alloc(out_c);
        convs.push((w, b, shape));
        in_c = out_c;
    }
    let d = spec.feature_dim();
    let comb_linear = (strategy == FusionStrategy::LateFc)
        .then(|| (alloc(d * 4 * d), alloc(d)));
    let comb_conv = (strategy == FusionStrategy::EarlyConv).then(|| {
        let c_pen = spec.stages[spec.stages.len() - 2];
        let shape = ConvShape { in_c: 4 * c_pen, out_c: c_pen, k: 1, stride: 1, pad: 0 };
        let w = alloc(shape.n_weights());
        let b = alloc(c_pen);
        (w, b, shape)
    });
    let head1 = (alloc(spec.head_hidden * d), alloc(spec.head_hidden));
    let head2 = (alloc(TRACE_POINTS * spec.head_hidden), alloc(TRACE_POINTS));
    Layout { convs, comb_linear, comb_conv, head1, head2, n_params: off }
}

/// Splits non-overlapping weight/bias gradient slices out of the flat
/// gradient vector; relies on biases directly following their weights.
fn wb_mut(grads: &mut [f64], w_off: usize, b_off: usize, b_len: usize) -> (&mut [f64], &mut [f64]) {
    let (left, right) = grads.split_at_mut(b_off);
    (&mut left[w_off..], &mut right[..b_len])
}

struct StageCache {
    x: FeatureMap,
    z: FeatureMap,
}

enum FusionCache {
    LateMax { argmax: Vec<u8> },
    LateFc { concat: Vec<f64> },
    EarlyMax { argmax: Vec<u8>, fused_stage: StageCache },
    EarlyConv { stacked: FeatureMap, fused_stage: StageCache },
}

struct ForwardCache {
    view_stages: Vec<Vec<StageCache>>,
    fusion: FusionCache,
    feat: Vec<f64>,
    h1z: Vec<f64>,
    h1a: Vec<f64>,
}

/// The complete regressor: shared encoder, one fusion strategy, dense head,
/// plus the input statistics and trace normalizer it was trained with.
#[derive(Debug, Clone)]
pub struct FusionModel {
    pub spec: EncoderSpec,
    pub strategy: FusionStrategy,
    pub modality: Modality,
    pub normalizer: TraceNormalizer,
    pub stats: ChannelStats,
    params: Vec<f64>,
    layout: Layout,
}

impl FusionModel {
    /// Fresh model with fan-in-scaled uniform weights and zero biases.
    pub fn init(
        spec: EncoderSpec,
        strategy: FusionStrategy,
        modality: Modality,
        normalizer: TraceNormalizer,
        stats: ChannelStats,
        seed: u64,
    ) -> Result<Self, NetError> {
        let layout = Self::check_parts(&spec, strategy, modality, &stats)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = vec![0.0; layout.n_params];
        let mut init_block = |params: &mut Vec<f64>, w_off: usize, n_w: usize, fan_in: usize| {
            let bound = (6.0 / fan_in as f64).sqrt();
            for p in &mut params[w_off..w_off + n_w] {
                *p = rng.gen_range(-bound..bound);
            }
        };
        for &(w_off, _, shape) in &layout.convs {
            init_block(&mut params, w_off, shape.n_weights(), shape.in_c * shape.k * shape.k);
        }
        let d = spec.feature_dim();
        if let Some((w_off, _)) = layout.comb_linear {
            init_block(&mut params, w_off, d * 4 * d, 4 * d);
        }
        if let Some((w_off, _, shape)) = layout.comb_conv {
            init_block(&mut params, w_off, shape.n_weights(), shape.in_c);
        }
        init_block(&mut params, layout.head1.0, spec.head_hidden * d, d);
        init_block(&mut params, layout.head2.0, TRACE_POINTS * spec.head_hidden, spec.head_hidden);
        Ok(FusionModel { spec, strategy, modality, normalizer, stats, params, layout })
    }

    /// Rebuilds a model around an existing parameter vector (checkpoints).
    pub(crate) fn from_parts(
        spec: EncoderSpec,
        strategy: FusionStrategy,
        modality: Modality,
        normalizer: TraceNormalizer,
        stats: ChannelStats,
        params: Vec<f64>,
    ) -> Result<Self, NetError> {
        let layout = Self::check_parts(&spec, strategy, modality, &stats)?;
        if params.len() != layout.n_params {
            return Err(NetError::Config(format!(
                "parameter vector has {} entries, layout needs {}",
                params.len(),
                layout.n_params
            )));
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(NetError::Config("non-finite parameter".into()));
        }
        Ok(FusionModel { spec, strategy, modality, normalizer, stats, params, layout })
    }

    fn check_parts(
        spec: &EncoderSpec,
        strategy: FusionStrategy,
        modality: Modality,
        stats: &ChannelStats,
    ) -> Result<Layout, NetError> {
        if spec.stages.is_empty() || spec.head_hidden == 0 || spec.input_px == 0 {
            return Err(NetError::Config("empty encoder spec".into()));
        }
        if spec.in_channels != modality.channels() {
            return Err(NetError::Config(format!(
                "spec expects {} input channels but modality {} provides {}",
                spec.in_channels,
                modality.as_str(),
                modality.channels()
            )));
        }
        if strategy.is_early() && spec.stages.len() < 2 {
            return Err(NetError::Config("early fusion needs at least two stages".into()));
        }
        if stats.mean.len() != spec.in_channels || stats.std.len() != spec.in_channels {
            return Err(NetError::Config("channel statistics do not match input channels".into()));
        }
        Ok(build_layout(spec, strategy))
    }

    pub fn n_params(&self) -> usize {
        self.layout.n_params
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    #[cfg(test)]
    pub(crate) fn combiner_conv_offsets(&self) -> Option<(usize, usize, ConvShape)> {
        self.layout.comb_conv
    }

    fn conv_w(&self, idx: usize) -> (&[f64], &[f64], ConvShape) {
        let (w_off, b_off, shape) = self.layout.convs[idx];
        (&self.params[w_off..w_off + shape.n_weights()], &self.params[b_off..b_off + shape.out_c], shape)
    }

    fn check_inputs(&self, inputs: &[InputTensor; 4]) -> Result<(), NetError> {
        for (i, t) in inputs.iter().enumerate() {
            if t.modality != self.modality {
                return Err(NetError::ShapeMismatch(format!(
                    "view {i} was built for modality {}, model expects {}",
                    t.modality.as_str(),
                    self.modality.as_str()
                )));
            }
            if t.channels != self.spec.in_channels || t.px != self.spec.input_px {
                return Err(NetError::ShapeMismatch(format!(
                    "view {i} is {}ch {}px, model expects {}ch {}px",
                    t.channels, t.px, self.spec.in_channels, self.spec.input_px
                )));
            }
            if t.data.len() != t.channels * t.px * t.px {
                return Err(NetError::ShapeMismatch(format!("view {i} data length is wrong")));
            }
        }
        Ok(())
    }

    fn run_stages(&self, input: &InputTensor, n_stages: usize) -> (FeatureMap, Vec<StageCache>) {
        let mut a = FeatureMap {
            c: input.channels,
            h: input.px,
            w: input.px,
            data: input.data.clone(),
        };
        let mut caches = Vec::with_capacity(n_stages);
        for si in 0..n_stages {
            let (w, b, shape) = self.conv_w(si);
            let z = conv_forward(&shape, w, b, &a);
            let act = FeatureMap { c: z.c, h: z.h, w: z.w, data: silu(&z.data) };
            caches.push(StageCache { x: a, z });
            a = act;
        }
        (a, caches)
    }

    /// Embeds one view through the shared encoder (all stages plus global
    /// pooling). Useful as the single-view reference path when checking
    /// fusion behaviour, or to inspect per-view embeddings.
    pub fn encode_view(&self, input: &InputTensor) -> Vec<f64> {
        let (a, _) = self.run_stages(input, self.spec.stages.len());
        gap_forward(&a)
    }

    /// Head only: maps a fused feature vector to 600 normalized radii.
    pub fn head(&self, feat: &[f64]) -> Vec<f64> {
        let d = self.spec.feature_dim();
        let hh = self.spec.head_hidden;
        let (w1, b1) = self.layout.head1;
        let h1z = linear_forward(
            &self.params[w1..w1 + hh * d],
            &self.params[b1..b1 + hh],
            d,
            hh,
            feat,
        );
        let h1a = silu(&h1z);
        let (w2, b2) = self.layout.head2;
        linear_forward(
            &self.params[w2..w2 + TRACE_POINTS * hh],
            &self.params[b2..b2 + TRACE_POINTS],
            hh,
            TRACE_POINTS,
            &h1a,
        )
    }

    fn forward_cached(&self, inputs: &[InputTensor; 4]) -> Result<(Vec<f64>, ForwardCache), NetError> {
        self.check_inputs(inputs)?;
        let n_stages = self.spec.stages.len();
        let mut view_stages = Vec::with_capacity(4);
        let mut pooled: Vec<Vec<f64>> = Vec::new();
        let (feat, fusion) = if self.strategy.is_early() {
            let mut maps = Vec::with_capacity(4);
            for t in inputs {
                let (m, caches) = self.run_stages(t, n_stages - 1);
                view_stages.push(caches);
                maps.push(m);
            }
            let (c, h, w) = (maps[0].c, maps[0].h, maps[0].w);
            let (fused, fusion_half) = match self.strategy {
                FusionStrategy::EarlyMax => {
                    let refs: Vec<&[f64]> = maps.iter().map(|m| m.data.as_slice()).collect();
                    let (data, argmax) = max_views_forward(&refs);
                    (FeatureMap { c, h, w, data }, Ok(argmax))
                }
                FusionStrategy::EarlyConv => {
                    let mut data = Vec::with_capacity(4 * c * h * w);
                    for m in &maps {
                        data.extend_from_slice(&m.data);
                    }
                    let stacked = FeatureMap { c: 4 * c, h, w, data };
                    let (w_off, b_off, shape) = self.layout.comb_conv.expect("layout");
                    let fused = conv_forward(
                        &shape,
                        &self.params[w_off..w_off + shape.n_weights()],
                        &self.params[b_off..b_off + shape.out_c],
                        &stacked,
                    );
                    (fused, Err(stacked))
                }
                _ => unreachable!(),
            };
            let (w, b, shape) = self.conv_w(n_stages - 1);
            let z = conv_forward(&shape, w, b, &fused);
            let a = FeatureMap { c: z.c, h: z.h, w: z.w, data: silu(&z.data) };
            let feat = gap_forward(&a);
            let fused_stage = StageCache { x: fused, z };
            let fusion = match fusion_half {
                Ok(argmax) => FusionCache::EarlyMax { argmax, fused_stage },
                Err(stacked) => FusionCache::EarlyConv { stacked, fused_stage },
            };
            (feat, fusion)
        } else {
            for t in inputs {
                let (a, caches) = self.run_stages(t, n_stages);
                view_stages.push(caches);
                pooled.push(gap_forward(&a));
            }
            match self.strategy {
                FusionStrategy::LateMax => {
                    let refs: Vec<&[f64]> = pooled.iter().map(|p| p.as_slice()).collect();
                    let (feat, argmax) = max_views_forward(&refs);
                    (feat, FusionCache::LateMax { argmax })
                }
                FusionStrategy::LateFc => {
                    let d = self.spec.feature_dim();
                    let mut concat = Vec::with_capacity(4 * d);
                    for p in &pooled {
                        concat.extend_from_slice(p);
                    }
                    let (w_off, b_off) = self.layout.comb_linear.expect("layout");
                    let feat = linear_forward(
                        &self.params[w_off..w_off + d * 4 * d],
                        &self.params[b_off..b_off + d],
                        4 * d,
                        d,
                        &concat,
                    );
                    (feat, FusionCache::LateFc { concat })
                }
                _ => unreachable!(),
            }
        };

        let d = self.spec.feature_dim();
        let hh = self.spec.head_hidden;
        let (w1, b1) = self.layout.head1;
        let h1z = linear_forward(
            &self.params[w1..w1 + hh * d],
            &self.params[b1..b1 + hh],
            d,
            hh,
            &feat,
        );
        let h1a = silu(&h1z);
        let (w2, b2) = self.layout.head2;
        let out = linear_forward(
            &self.params[w2..w2 + TRACE_POINTS * hh],
            &self.params[b2..b2 + TRACE_POINTS],
            hh,
            TRACE_POINTS,
            &h1a,
        );
        Ok((out, ForwardCache { view_stages, fusion, feat, h1z, h1a }))
    }

    /// Forward pass: 600 normalized radii.
    pub fn forward(&self, inputs: &[InputTensor; 4]) -> Result<Vec<f64>, NetError> {
        Ok(self.forward_cached(inputs)?.0)
    }

    /// Backward through the final conv stage applied to the fused map;
    /// returns the gradient at the fused map.
    fn backward_fused_stage(
        &self,
        fused_stage: &StageCache,
        g_feat: &[f64],
        grads: &mut [f64],
    ) -> FeatureMap {
        let n_stages = self.spec.stages.len();
        let z = &fused_stage.z;
        let gm = gap_backward(z.c, z.h, z.w, g_feat);
        let gz = FeatureMap { c: z.c, h: z.h, w: z.w, data: silu_backward(&z.data, &gm.data) };
        let (w_off, b_off, shape) = self.layout.convs[n_stages - 1];
        let ws = &self.params[w_off..w_off + shape.n_weights()];
        let (gw, gb) = wb_mut(grads, w_off, b_off, shape.out_c);
        conv_backward(&shape, ws, &fused_stage.x, &gz, gw, gb)
    }

    fn backward_through_stages(
        &self,
        caches: &[StageCache],
        mut g: FeatureMap,
        grads: &mut [f64],
    ) {
        for (si, st) in caches.iter().enumerate().rev() {
            let gz = FeatureMap {
                c: st.z.c,
                h: st.z.h,
                w: st.z.w,
                data: silu_backward(&st.z.data, &g.data),
            };
            let (w_off, b_off, shape) = self.layout.convs[si];
            let w = &self.params[w_off..w_off + shape.n_weights()];
            let (gw, gb) = wb_mut(grads, w_off, b_off, shape.out_c);
            g = conv_backward(&shape, w, &st.x, &gz, gw, gb);
        }
    }

    /// Loss and exact gradients for every parameter. Encoder gradients sum
    /// the contributions from all four views (shared weights).
    pub fn backward(
        &self,
        inputs: &[InputTensor; 4],
        target_norm: &[f64],
        kind: LossKind,
    ) -> Result<(f64, Vec<f64>), NetError> {
        let (out, cache) = self.forward_cached(inputs)?;
        if target_norm.len() != out.len() {
            return Err(NetError::ShapeMismatch(format!(
                "target has {} values, model emits {}",
                target_norm.len(),
                out.len()
            )));
        }
        let (loss, gout) = loss_and_grad(&out, target_norm, kind);
        let mut grads = vec![0.0; self.layout.n_params];
        let d = self.spec.feature_dim();
        let hh = self.spec.head_hidden;

        let (w2, b2) = self.layout.head2;
        let w2s = &self.params[w2..w2 + TRACE_POINTS * hh];
        let g_h1a = {
            let (gw, gb) = wb_mut(&mut grads, w2, b2, TRACE_POINTS);
            linear_backward(w2s, hh, TRACE_POINTS, &cache.h1a, &gout, gw, gb)
        };
        let g_h1z = silu_backward(&cache.h1z, &g_h1a);
        let (w1, b1) = self.layout.head1;
        let w1s = &self.params[w1..w1 + hh * d];
        let g_feat = {
            let (gw, gb) = wb_mut(&mut grads, w1, b1, hh);
            linear_backward(w1s, d, hh, &cache.feat, &g_h1z, gw, gb)
        };

        match &cache.fusion {
            FusionCache::LateMax { argmax } => {
                let per_view = max_views_backward(argmax, &g_feat, 4);
                for (vi, gp) in per_view.into_iter().enumerate() {
                    let last = cache.view_stages[vi].last().expect("stages");
                    let gm = gap_backward(last.z.c, last.z.h, last.z.w, &gp);
                    self.backward_through_stages(&cache.view_stages[vi], gm, &mut grads);
                }
            }
            FusionCache::LateFc { concat } => {
                let (w_off, b_off) = self.layout.comb_linear.expect("layout");
                let ws = &self.params[w_off..w_off + d * 4 * d];
                let g_concat = {
                    let (gw, gb) = wb_mut(&mut grads, w_off, b_off, d);
                    linear_backward(ws, 4 * d, d, concat, &g_feat, gw, gb)
                };
                for vi in 0..4 {
                    let gp = &g_concat[vi * d..(vi + 1) * d];
                    let last = cache.view_stages[vi].last().expect("stages");
                    let gm = gap_backward(last.z.c, last.z.h, last.z.w, gp);
                    self.backward_through_stages(&cache.view_stages[vi], gm, &mut grads);
                }
            }
            FusionCache::EarlyMax { argmax, fused_stage } => {
                let g_fused = self.backward_fused_stage(fused_stage, &g_feat, &mut grads);
                let routed = max_views_backward(argmax, &g_fused.data, 4);
                for (vi, data) in routed.into_iter().enumerate() {
                    let gm = FeatureMap { c: g_fused.c, h: g_fused.h, w: g_fused.w, data };
                    self.backward_through_stages(&cache.view_stages[vi], gm, &mut grads);
                }
            }
            FusionCache::EarlyConv { stacked, fused_stage } => {
                let g_fused = self.backward_fused_stage(fused_stage, &g_feat, &mut grads);
                let (cw_off, cb_off, cshape) = self.layout.comb_conv.expect("layout");
                let cws = &self.params[cw_off..cw_off + cshape.n_weights()];
                let g_stacked = {
                    let (gw, gb) = wb_mut(&mut grads, cw_off, cb_off, cshape.out_c);
                    conv_backward(&cshape, cws, stacked, &g_fused, gw, gb)
                };
                let block = g_fused.c * g_fused.h * g_fused.w;
                for vi in 0..4 {
                    let gm = FeatureMap {
                        c: g_fused.c,
                        h: g_fused.h,
                        w: g_fused.w,
                        data: g_stacked.data[vi * block..(vi + 1) * block].to_vec(),
                    };
                    self.backward_through_stages(&cache.view_stages[vi], gm, &mut grads);
                }
            }
        }
        Ok((loss, grads))
    }

    /// End-to-end prediction: build inputs, forward, denormalize; radius
    /// range violations are flagged on the returned trace, not hidden.
    pub fn predict_trace(&self, sample: &MultiViewSample) -> Result<RadialTrace, NetError> {
        let inputs = build_input(sample, self.modality, &self.stats, self.spec.input_px)?;
        let out = self.forward(&inputs)?;
        let mm = self.normalizer.denormalize(&out);
        let mut trace = RadialTrace::from_predicted(mm, sample.truth.angle0_rad(), sample.eye)?;
        trace = RadialTrace::new(
            trace.radii_mm().to_vec(),
            trace.angle0_rad(),
            sample.truth.center_2d(),
            sample.eye,
            trace.flags().to_vec(),
        )?;
        Ok(trace)
    }
}
