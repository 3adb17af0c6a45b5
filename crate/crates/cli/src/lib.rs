//! Command-line pipeline around the detector: scene simulation, feature
//! extraction, training, evaluation, single-file inference, and ROC export.
//!
//! Each subcommand reads and writes the shared on-disk formats (WAV, ALBL
//! labels, AFEA features, DVEC embeddings, APVD checkpoints, JSON
//! manifests), so stages can be re-run independently. Every artifact
//! directory carries a manifest with the exact configuration and seed that
//! produced it, and nothing in a manifest depends on wall-clock time or
//! absolute paths: a seeded run is byte-reproducible.

pub mod commands;
pub mod config;
pub mod dataset;
pub mod manifest;
pub mod parallel;

pub use config::{parse_config, ConfigOverrides, RunConfig};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config: {0}")]
    BadConfig(String),
    #[error("missing input: {0}")]
    MissingInput(String),
    #[error("dataset: {0}")]
    BadDataset(String),
    #[error(transparent)]
    Dsp(#[from] coher_dsp::DspError),
    #[error(transparent)]
    Feat(#[from] coher_features::FeatError),
    #[error(transparent)]
    Embed(#[from] coher_embed::EmbedError),
    #[error(transparent)]
    Net(#[from] coher_net::NetError),
    #[error(transparent)]
    Train(#[from] coher_train::TrainError),
    #[error(transparent)]
    Sim(#[from] coher_sim::SimError),
    #[error(transparent)]
    Metrics(#[from] coher_metrics::MetricsError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, CliError>;

/// Version string recorded in every manifest.
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");
