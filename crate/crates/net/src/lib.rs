//! Frame-level personal voice activity classifier.
//!
//! The network consumes the (3, frames, bands) spatial feature tensor and a
//! speaker embedding, and emits one speech probability per frame. Forward
//! passes are recorded on an autodiff tape whose reverse pass is verified
//! against finite differences, so training needs no external ML runtime.

mod checkpoint;
mod gradcheck;
mod loss;
mod model;
mod tape;
mod tensor;

pub use checkpoint::{
    load_checkpoint, load_checkpoint_file, save_checkpoint, save_checkpoint_file, Checkpoint,
    CheckpointMeta, CHECKPOINT_MAGIC, CHECKPOINT_VERSION, OPTIMIZER_PREFIX,
};
pub use gradcheck::{run_layer_gradient_suite, LayerReport, FD_STEP, REL_TOL};
pub use loss::bce_loss;
pub use model::{
    BnUpdate, ForwardGraph, Mode, ModelConfig, ParamKind, ParamSpec, PvadModel, CONV_BLOCKS,
};
pub use tape::{sigmoid, BnBatchStats, ConvGeom, Gradients, NodeId, Tape};
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NetError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid model config: {0}")]
    BadConfig(String),
    #[error("node {0} does not exist on this tape; run a forward pass first")]
    UnknownNode(usize),
    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("invalid checkpoint: {0}")]
    BadCheckpoint(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}
