//! Learned multi-view trace regression: a shared convolutional encoder per
//! view, four fusion strategies (early/late × max/learned), and a dense head
//! emitting 600 normalized radii. All math is plain f64 with hand-written
//! reverse-mode gradients, so training is exactly reproducible and every
//! gradient is checkable against finite differences.

mod checkpoint;
mod model;
mod tensor;
mod train;

pub use checkpoint::{read_checkpoint, write_checkpoint};
pub use model::{
    build_input, build_raw_input, loss, ChannelStats, EncoderSpec, FusionModel, FusionStrategy,
    InputTensor, LossKind, Modality, ModelSize,
};
pub use train::{
    mean_error_mm, per_sample_error_mm, train, EpochStats, TensorDataset, TrainConfig, TrainReport,
};

use crate::trace::TraceError;

#[derive(Debug, thiserror::Error)]
pub enum NetError {
    #[error("modality {modality} needs {needed} image channel(s), sample has {got}")]
    ModalityMismatch { modality: &'static str, needed: usize, got: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("training diverged at epoch {epoch}: loss {loss}")]
    DivergenceDetected { epoch: usize, loss: f64 },
    #[error("bad configuration: {0}")]
    Config(String),
    #[error("corrupt checkpoint {path}: {msg}")]
    Corrupt { path: String, msg: String },
    #[error(transparent)]
    Trace(#[from] TraceError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
