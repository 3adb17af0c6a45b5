//! Spatial-coherence features for multichannel voice activity detection.
//!
//! From a multichannel STFT this crate derives two time-frequency maps of
//! spatial coherence, one tracking slow spatial statistics and one tracking
//! fast ones, pools them onto an auditory-motivated band axis, and stacks
//! them with the reference channel's log band energy into the (3, L, B)
//! input tensor consumed by the detector network.
//!
//! The per-bin statistic compares the instantaneous whitened relative
//! transfer function against a recursively averaged one: coherent sources
//! with stable geometry score near 1, while diffuse fields or a newly
//! active direction pull the score down. The slow and fast maps differ
//! only in the forgetting factor of the average.

mod erb;
mod io;

pub use erb::{build_erb_filterbank, erb_rate, ErbFilterbank};
pub use io::{load_afea, save_afea};

use coher_dsp::Spectrogram;
use num_complex::Complex64;
use thiserror::Error;

/// Below this magnitude product a bin is treated as degenerate and its
/// whitened entry is set to zero.
pub const DEGENERATE_FLOOR: f64 = 1e-12;

/// Floor inside the log of the band-energy channel.
pub const LOG_FLOOR: f64 = 1e-10;

/// Number of input feature channels: log band energy plus two coherence maps.
pub const FEATURE_CHANNELS: usize = 3;

#[derive(Debug, Error)]
pub enum FeatError {
    #[error("spatial features require >= 2 microphones, got {0}")]
    NeedTwoChannels(usize),
    #[error("forgetting factor out of range: {0}")]
    BadLambda(f64),
    #[error("dimension mismatch: {0}")]
    DimsMismatch(String),
    #[error("filterbank needs 2 <= bands <= bins (got {bands} bands, {bins} bins)")]
    BadBands { bands: usize, bins: usize },
    #[error("band {0} covers no bins")]
    EmptyBand(usize),
    #[error("feature file: {0}")]
    BadFile(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, FeatError>;

/// Whitened relative transfer function of one frame, all bins at once.
///
/// `frame_channels` holds the STFT bins of each channel for a single frame,
/// reference first. The output has `(M - 1) * F` entries, entry
/// `(m - 1) * F + f` being channel `m`'s bin `f` relative to the reference:
/// the unit-modulus phasor `exp(j * (angle(Y_m) - angle(Y_ref)))`. Bins
/// whose magnitude product falls below [`DEGENERATE_FLOOR`] are zero.
pub fn whiten_rtf_frame(frame_channels: &[&[Complex64]]) -> Result<Vec<Complex64>> {
    let m = frame_channels.len();
    if m < 2 {
        return Err(FeatError::NeedTwoChannels(m));
    }
    let bins = frame_channels[0].len();
    if frame_channels.iter().any(|c| c.len() != bins) {
        return Err(FeatError::DimsMismatch("channels differ in bin count".into()));
    }
    let mut out = Vec::with_capacity((m - 1) * bins);
    let reference = frame_channels[0];
    for other in &frame_channels[1..] {
        for (y_ref, y_m) in reference.iter().zip(other.iter()) {
            let denom = y_m.norm() * y_ref.norm();
            if denom < DEGENERATE_FLOOR {
                out.push(Complex64::new(0.0, 0.0));
            } else {
                out.push(y_m * y_ref.conj() / denom);
            }
        }
    }
    Ok(out)
}

/// Whitened relative transfer function of a single time-frequency bin:
/// the `M - 1` phasors of the non-reference channels relative to channel 0.
pub fn whiten_rtf(spec: &Spectrogram, l: usize, f: usize) -> Result<Vec<Complex64>> {
    let m = spec.num_channels();
    if m < 2 {
        return Err(FeatError::NeedTwoChannels(m));
    }
    let y_ref = spec.at(0, l, f);
    let mut out = Vec::with_capacity(m - 1);
    for ch in 1..m {
        let y_m = spec.at(ch, l, f);
        let denom = y_m.norm() * y_ref.norm();
        if denom < DEGENERATE_FLOOR {
            out.push(Complex64::new(0.0, 0.0));
        } else {
            out.push(y_m * y_ref.conj() / denom);
        }
    }
    Ok(out)
}

/// Recursive average `prev <- lambda * prev + (1 - lambda) * current`,
/// elementwise over complex entries. `lambda` in [0, 1]. The stored average
/// is *not* unit-modulus; callers re-whiten a copy before scoring.
pub fn update_long_term_rtf(
    prev: &mut [Complex64],
    current: &[Complex64],
    lambda: f64,
) -> Result<()> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(FeatError::BadLambda(lambda));
    }
    if prev.len() != current.len() {
        return Err(FeatError::DimsMismatch("average and update differ in length".into()));
    }
    for (p, c) in prev.iter_mut().zip(current.iter()) {
        *p = *p * lambda + *c * (1.0 - lambda);
    }
    Ok(())
}

/// Normalizes every entry back to unit modulus, zeroing entries whose
/// magnitude falls below [`DEGENERATE_FLOOR`].
pub fn rewhiten(entries: &mut [Complex64]) {
    for e in entries.iter_mut() {
        let mag = e.norm();
        *e = if mag < DEGENERATE_FLOOR { Complex64::new(0.0, 0.0) } else { *e / mag };
    }
}

/// Coherence of one bin between the instantaneous whitened vector `r` and
/// the re-whitened long-term vector `rbar`, both of length `M - 1`:
/// `Re(sum conj(r) * rbar) / (M - 1)`, clamped to [-1, 1].
pub fn lstsc_frame(r: &[Complex64], rbar: &[Complex64]) -> Result<f64> {
    if r.is_empty() {
        return Err(FeatError::NeedTwoChannels(1));
    }
    if r.len() != rbar.len() {
        return Err(FeatError::DimsMismatch("vectors differ in length".into()));
    }
    let dot: f64 = r.iter().zip(rbar.iter()).map(|(a, b)| (a.conj() * b).re).sum();
    Ok((dot / r.len() as f64).clamp(-1.0, 1.0))
}

/// Forgetting factors for the two coherence maps, plus optional recursive
/// smoothing of the cross- and auto-spectra before whitening.
#[derive(Debug, Clone, PartialEq)]
pub struct CoherenceConfig {
    /// Slow tracker; close to 1 so early spatial structure persists.
    pub lambda_global: f64,
    /// Fast tracker; close to 0 so the average follows the current frame.
    pub lambda_local: f64,
    /// `Some(lambda)` smooths the spectra recursively before whitening.
    /// Off by default: whitening then acts on raw per-frame spectra.
    pub psd_smoothing: Option<f64>,
}

impl Default for CoherenceConfig {
    fn default() -> Self {
        CoherenceConfig { lambda_global: 0.99, lambda_local: 0.01, psd_smoothing: None }
    }
}

/// The slow and fast coherence maps over `(frame, bin)`, values in [-1, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct LstscMaps {
    global: Vec<f64>,
    local: Vec<f64>,
    num_frames: usize,
    num_bins: usize,
}

impl LstscMaps {
    pub fn num_frames(&self) -> usize {
        self.num_frames
    }

    pub fn num_bins(&self) -> usize {
        self.num_bins
    }

    pub fn global(&self, l: usize, f: usize) -> f64 {
        self.global[l * self.num_bins + f]
    }

    pub fn local(&self, l: usize, f: usize) -> f64 {
        self.local[l * self.num_bins + f]
    }

    pub fn global_frame(&self, l: usize) -> &[f64] {
        &self.global[l * self.num_bins..(l + 1) * self.num_bins]
    }

    pub fn local_frame(&self, l: usize) -> &[f64] {
        &self.local[l * self.num_bins..(l + 1) * self.num_bins]
    }
}

/// Produces the instantaneous whitened vector of each frame, either from
/// raw per-frame spectra or from recursively smoothed spectra.
struct Whitener {
    psd_lambda: Option<f64>,
    cross: Vec<Complex64>,
    auto_ref: Vec<f64>,
    auto_other: Vec<f64>,
    started: bool,
}

impl Whitener {
    fn new(psd_lambda: Option<f64>, channels_minus_one: usize, bins: usize) -> Self {
        Whitener {
            psd_lambda,
            cross: vec![Complex64::new(0.0, 0.0); channels_minus_one * bins],
            auto_ref: vec![0.0; bins],
            auto_other: vec![0.0; channels_minus_one * bins],
            started: false,
        }
    }

    fn whiten(&mut self, frame_channels: &[&[Complex64]], out: &mut Vec<Complex64>) {
        out.clear();
        let Some(lambda) = self.psd_lambda else {
            out.extend(whiten_rtf_frame(frame_channels).expect("validated dims"));
            return;
        };
        let bins = frame_channels[0].len();
        let reference = frame_channels[0];
        let keep = if self.started { lambda } else { 0.0 };
        self.started = true;
        for (f, y) in reference.iter().enumerate() {
            self.auto_ref[f] = keep * self.auto_ref[f] + (1.0 - keep) * y.norm_sqr();
        }
        for (k, other) in frame_channels[1..].iter().enumerate() {
            for (f, y_m) in other.iter().enumerate() {
                let i = k * bins + f;
                self.cross[i] = self.cross[i] * keep + y_m * reference[f].conj() * (1.0 - keep);
                self.auto_other[i] = keep * self.auto_other[i] + (1.0 - keep) * y_m.norm_sqr();
                let denom = (self.auto_other[i] * self.auto_ref[f]).sqrt();
                if denom < DEGENERATE_FLOOR {
                    out.push(Complex64::new(0.0, 0.0));
                } else {
                    out.push(self.cross[i] / denom);
                }
            }
        }
        // The smoothed ratio has modulus below 1 in general; whitening
        // restores the unit-modulus contract of the short-term vector.
        rewhiten(out);
    }
}

/// Computes both coherence maps over all frames of a multichannel STFT.
///
/// Channel 0 is the reference. The recursion state is the raw running
/// average; a re-whitened copy of it is scored against the instantaneous
/// vector each frame. Both averages are seeded with frame 0's whitened
/// vector, so frame 0 scores 1 wherever no bin is degenerate.
pub fn compute_lstsc_maps(spec: &Spectrogram, cfg: &CoherenceConfig) -> Result<LstscMaps> {
    let m = spec.num_channels();
    if m < 2 {
        return Err(FeatError::NeedTwoChannels(m));
    }
    for lambda in [cfg.lambda_global, cfg.lambda_local] {
        if !(lambda > 0.0 && lambda < 1.0) {
            return Err(FeatError::BadLambda(lambda));
        }
    }
    if let Some(lambda) = cfg.psd_smoothing {
        if !(lambda > 0.0 && lambda < 1.0) {
            return Err(FeatError::BadLambda(lambda));
        }
    }

    let frames = spec.num_frames();
    let bins = spec.num_bins();
    let mut global = Vec::with_capacity(frames * bins);
    let mut local = Vec::with_capacity(frames * bins);

    let mut whitener = Whitener::new(cfg.psd_smoothing, m - 1, bins);
    let mut r = Vec::with_capacity((m - 1) * bins);
    let mut rbar_global: Vec<Complex64> = Vec::new();
    let mut rbar_local: Vec<Complex64> = Vec::new();
    let mut white_global: Vec<Complex64> = Vec::new();
    let mut white_local: Vec<Complex64> = Vec::new();
    let mut frame_refs: Vec<&[Complex64]> = Vec::with_capacity(m);

    for l in 0..frames {
        frame_refs.clear();
        for ch in 0..m {
            frame_refs.push(spec.frame(ch, l));
        }
        whitener.whiten(&frame_refs, &mut r);

        if l == 0 {
            rbar_global = r.clone();
            rbar_local = r.clone();
        } else {
            update_long_term_rtf(&mut rbar_global, &r, cfg.lambda_global)?;
            update_long_term_rtf(&mut rbar_local, &r, cfg.lambda_local)?;
        }
        white_global.clone_from(&rbar_global);
        white_local.clone_from(&rbar_local);
        rewhiten(&mut white_global);
        rewhiten(&mut white_local);

        // Per-bin score: Re(conj(r) * rbar) summed over the M - 1 channel
        // pairs, normalized by M - 1 and clamped.
        let denom = (m - 1) as f64;
        for f in 0..bins {
            let mut dot_g = 0.0;
            let mut dot_l = 0.0;
            for k in 0..m - 1 {
                let i = k * bins + f;
                dot_g += (r[i].conj() * white_global[i]).re;
                dot_l += (r[i].conj() * white_local[i]).re;
            }
            global.push((dot_g / denom).clamp(-1.0, 1.0));
            local.push((dot_l / denom).clamp(-1.0, 1.0));
        }
    }

    Ok(LstscMaps { global, local, num_frames: frames, num_bins: bins })
}

/// The (3, L, B) network input: channel 0 is `log10(band energy + 1e-10)`
/// of the reference microphone, channels 1 and 2 are the band-pooled slow
/// and fast coherence maps. Values are rounded to f32 precision so the
/// in-memory tensor equals its on-disk form bit for bit.
#[derive(Debug, Clone, PartialEq)]
pub struct InputFeature {
    data: Vec<f64>,
    num_frames: usize,
    num_bands: usize,
}

impl InputFeature {
    pub fn from_raw(data: Vec<f64>, num_frames: usize, num_bands: usize) -> Result<Self> {
        if data.len() != FEATURE_CHANNELS * num_frames * num_bands {
            return Err(FeatError::DimsMismatch(format!(
                "expected {} values for (3, {}, {}), got {}",
                FEATURE_CHANNELS * num_frames * num_bands,
                num_frames,
                num_bands,
                data.len()
            )));
        }
        Ok(InputFeature { data, num_frames, num_bands })
    }

    pub fn num_frames(&self) -> usize {
        self.num_frames
    }

    pub fn num_bands(&self) -> usize {
        self.num_bands
    }

    pub fn at(&self, c: usize, l: usize, b: usize) -> f64 {
        self.data[(c * self.num_frames + l) * self.num_bands + b]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Frame `l` of channel `c` as a contiguous band slice.
    pub fn frame(&self, c: usize, l: usize) -> &[f64] {
        let start = (c * self.num_frames + l) * self.num_bands;
        &self.data[start..start + self.num_bands]
    }

    /// Copy with both coherence channels replaced by the constant 1,
    /// the value they take when no spatial stream is available.
    pub fn enrollless_variant(&self) -> InputFeature {
        let mut out = self.clone();
        let plane = self.num_frames * self.num_bands;
        for v in &mut out.data[plane..] {
            *v = 1.0;
        }
        out
    }
}

/// Builds the network input from a multichannel STFT.
///
/// `maps` carries the coherence maps when two or more microphones exist;
/// pass `None` for single-channel or enrollment-less operation, which sets
/// both coherence channels to 1. Band pooling uses `fb`, which must match
/// the spectrogram's bin count.
pub fn assemble_input(
    spec: &Spectrogram,
    maps: Option<&LstscMaps>,
    fb: &ErbFilterbank,
) -> Result<InputFeature> {
    let frames = spec.num_frames();
    let bins = spec.num_bins();
    if fb.num_bins() != bins {
        return Err(FeatError::DimsMismatch(format!(
            "filterbank covers {} bins, spectrogram has {}",
            fb.num_bins(),
            bins
        )));
    }
    if let Some(maps) = maps {
        if maps.num_frames() != frames || maps.num_bins() != bins {
            return Err(FeatError::DimsMismatch(format!(
                "coherence maps are ({}, {}), spectrogram is ({}, {})",
                maps.num_frames(),
                maps.num_bins(),
                frames,
                bins
            )));
        }
    }

    let bands = fb.num_bands();
    let mut data = vec![0.0f64; FEATURE_CHANNELS * frames * bands];
    let mut power = vec![0.0f64; bins];

    for l in 0..frames {
        for (f, slot) in power.iter_mut().enumerate() {
            *slot = spec.at(0, l, f).norm_sqr();
        }
        let pooled = fb.pool_power(&power);
        for b in 0..bands {
            data[l * bands + b] = (pooled[b] + LOG_FLOOR).log10();
        }
        match maps {
            Some(maps) => {
                let pooled_g = fb.pool_coherence(maps.global_frame(l));
                let pooled_l = fb.pool_coherence(maps.local_frame(l));
                for b in 0..bands {
                    data[(frames + l) * bands + b] = pooled_g[b];
                    data[(2 * frames + l) * bands + b] = pooled_l[b];
                }
            }
            None => {
                for b in 0..bands {
                    data[(frames + l) * bands + b] = 1.0;
                    data[(2 * frames + l) * bands + b] = 1.0;
                }
            }
        }
    }

    // Quantize to f32 so the tensor round-trips bitwise through files.
    for v in &mut data {
        *v = *v as f32 as f64;
    }
    InputFeature::from_raw(data, frames, bands)
}
