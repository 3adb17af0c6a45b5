//! Optimization recipe for the voice activity classifier: Adam with
//! gradient-norm clipping, plateau learning-rate halving, random
//! enrollment-less substitution, and validation-driven checkpoint selection.

mod fit;
mod optim;

pub use fit::{train, write_log_jsonl, EpochRecord, TrainOutcome, TrainSample};
pub use optim::{adam_step, clip_grad_norm, lr_schedule_step, AdamState, ADAM_BETA1, ADAM_BETA2, ADAM_EPS};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("empty dataset: {0}")]
    EmptyDataset(&'static str),
    #[error("invalid training config: {0}")]
    BadConfig(String),
    #[error("non-finite gradient")]
    NonFiniteGradient,
    #[error("sample has {frames} frames but {labels} labels")]
    LabelMismatch { frames: usize, labels: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error(transparent)]
    Net(#[from] coher_net::NetError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct TrainConfig {
    pub lr0: f64,
    pub clip_norm: f64,
    pub plateau_epochs: usize,
    pub lr_factor: f64,
    pub p_enrollless: f64,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr0: 0.001,
            clip_norm: 3.0,
            plateau_epochs: 3,
            lr_factor: 0.5,
            p_enrollless: 0.1,
            epochs: 15,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.lr0 <= 0.0 || !self.lr0.is_finite() {
            return Err(TrainError::BadConfig("lr0 must be positive".into()));
        }
        if self.clip_norm <= 0.0 || !self.clip_norm.is_finite() {
            return Err(TrainError::BadConfig("clip_norm must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.p_enrollless) {
            return Err(TrainError::BadConfig("p_enrollless must lie in [0, 1]".into()));
        }
        if self.epochs == 0 {
            return Err(TrainError::BadConfig("epochs must be at least 1".into()));
        }
        if self.plateau_epochs == 0 {
            return Err(TrainError::BadConfig("plateau_epochs must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.lr_factor) || self.lr_factor <= 0.0 {
            return Err(TrainError::BadConfig("lr_factor must lie in (0, 1)".into()));
        }
        Ok(())
    }
}
