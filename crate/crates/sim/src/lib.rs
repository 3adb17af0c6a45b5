//! Synthetic multichannel scene generator.
//!
//! Produces the training and evaluation material for the detector without
//! any recorded corpus: array geometries, randomized source placements,
//! fractional-delay room responses with optional decaying reverberant
//! tails, speech-like source signals, and the rendered mixtures with
//! frame-accurate activity labels.
//!
//! Everything is a pure function of (seed, spec): rendering the same scene
//! twice yields bitwise-identical waveforms, which the dataset tooling
//! relies on for reproducible artifacts.

mod geometry;
mod labels;
mod render;
mod rir;
mod scene;
mod source;

pub use geometry::{make_geometry, preset, preset_names, test_geometries, training_geometries, ArrayGeometry, GeometryKind};
pub use labels::{
    label_frames, load_labels, load_labels_file, save_labels, save_labels_file, DEFAULT_LABEL_THRESHOLD_DB, LABEL_MAGIC,
};
pub use render::{
    render_scene, simulate_scene, synthesize_sources, ReferenceImages, RenderedScene, SceneWaves, DATASET_SAMPLE_RATE,
    DEFAULT_DRR_DB,
};
pub use rir::{source_position, synth_rir, Rir, BULK_DELAY_SAMPLES, DIRECT_PATH_TAPS, SPEED_OF_SOUND_M_S};
pub use scene::{
    sample_scene, SceneConstraints, SceneSpec, SourcePlacement, SourceRole, Span, MAX_PLACEMENT_ATTEMPTS,
    MIN_ANGLE_GAP_DEG,
};
pub use source::{speaker_profile, speech_like, SpeakerProfile, NUM_SPEAKER_PROFILES};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("geometry: {0}")]
    BadGeometry(String),
    #[error("scene constraints: {0}")]
    BadConstraints(String),
    #[error("scene spec: {0}")]
    BadSpec(String),
    #[error("could not satisfy placement constraints after {0} attempts")]
    Unsatisfiable(usize),
    #[error("source within {limit_m} m of microphone {mic}")]
    SourceTooClose { mic: usize, limit_m: f64 },
    #[error("source inside the array hull")]
    SourceInsideArray,
    #[error("bad parameter: {0}")]
    BadParam(String),
    #[error("silent source cannot be scaled: {0}")]
    SilentSource(&'static str),
    #[error("wave length mismatch: expected {expected} samples, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("label file: {0}")]
    BadLabelFile(String),
    #[error(transparent)]
    Dsp(#[from] coher_dsp::DspError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, SimError>;

/// Derives an independent RNG stream from a scene seed and a role tag, so
/// the per-source waves, reverberant tails, and sensor noise never share a
/// stream even though they share one scene seed.
pub(crate) fn stream_seed(seed: u64, tag: &str) -> u64 {
    let mut h = 0xcbf29ce484222325u64;
    for b in tag.bytes() {
        h = (h ^ b as u64).wrapping_mul(0x100000001b3);
    }
    h ^ seed
}
