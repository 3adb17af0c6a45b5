//! Subcommand implementations. Each returns its primary artifact so tests
//! can call commands as library functions.

pub mod eval;
pub mod features;
pub mod infer;
pub mod roc;
pub mod simulate;
pub mod train;

use crate::dataset::{FRAME_LEN, HOP, NFFT};
use crate::Result;
use coher_dsp::{stft, WaveBuffer, WindowKind};
use coher_features::{
    assemble_input, build_erb_filterbank, compute_lstsc_maps, CoherenceConfig, InputFeature,
};

/// Network input for one wave: log band energy of the reference channel
/// plus both coherence maps when at least two microphones are present;
/// single-channel waves get the all-ones coherence planes.
pub fn wave_feature(
    wave: &WaveBuffer,
    lambda_global: f64,
    lambda_local: f64,
    bands: usize,
) -> Result<InputFeature> {
    let spec = stft(wave, FRAME_LEN, HOP, NFFT, WindowKind::Hann)?;
    let fb = build_erb_filterbank(NFFT, wave.sample_rate(), bands)?;
    let maps = if wave.num_channels() >= 2 {
        let cfg = CoherenceConfig { lambda_global, lambda_local, psd_smoothing: None };
        Some(compute_lstsc_maps(&spec, &cfg)?)
    } else {
        None
    };
    Ok(assemble_input(&spec, maps.as_ref(), &fb)?)
}
