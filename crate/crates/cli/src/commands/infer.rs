//! Single-file inference: one WAV plus one enrollment embedding in, one
//! per-frame probability CSV out.

use crate::commands::wave_feature;
use crate::dataset::{FRAME_LEN, HOP, NFFT};
use crate::{CliError, Result};
use coher_dsp::wav::read_wav;
use coher_dsp::{stft, WindowKind};
use coher_embed::load_embedding;
use coher_features::{assemble_input, build_erb_filterbank};
use coher_net::load_checkpoint_file;
use std::io::Write;
use std::path::Path;

pub struct InferOptions {
    /// Ignore the spatial stream even when several channels exist: both
    /// coherence planes are set to 1, the single-channel operating point.
    pub enrollless: bool,
}

/// Runs the model in `checkpoint` over `wav` conditioned on `embedding`;
/// returns the per-frame speech probabilities and optionally writes them
/// as `frame,probability` CSV rows.
pub fn run(
    wav: &Path,
    checkpoint: &Path,
    embedding: &Path,
    out: Option<&Path>,
    opts: &InferOptions,
) -> Result<Vec<f64>> {
    let wave = read_wav(wav)?;
    let ckpt = load_checkpoint_file(checkpoint)?;
    let cfg = ckpt.model.config();
    let emb = load_embedding(embedding)?;
    if emb.dim() != cfg.embedding_dim {
        return Err(CliError::BadConfig(format!(
            "embedding has {} dimensions, model expects {}",
            emb.dim(),
            cfg.embedding_dim
        )));
    }

    let feature = if opts.enrollless {
        // Identical to computing the coherence maps and overwriting them
        // with ones, but skips the map computation.
        let spec = stft(&wave, FRAME_LEN, HOP, NFFT, WindowKind::Hann)?;
        let fb = build_erb_filterbank(NFFT, wave.sample_rate(), cfg.bands)?;
        assemble_input(&spec, None, &fb)?
    } else {
        // Inference always uses the map defaults; training-time forgetting
        // factors are a data-preparation choice, not a model parameter.
        let defaults = coher_features::CoherenceConfig::default();
        wave_feature(&wave, defaults.lambda_global, defaults.lambda_local, cfg.bands)?
    };

    let probs = ckpt.model.predict(&feature, &emb)?;
    if let Some(out) = out {
        let mut text = String::from("frame,probability\n");
        for (i, p) in probs.iter().enumerate() {
            text.push_str(&format!("{i},{p}\n"));
        }
        let tmp = out.with_extension("tmp");
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(text.as_bytes())?;
        f.flush()?;
        std::fs::rename(&tmp, out)?;
    }
    Ok(probs)
}
