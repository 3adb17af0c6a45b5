//! STFT analysis and frame-energy primitives shared by the feature,
//! labeling, and simulation stages.
//!
//! All analysis runs in double precision. Framing never pads the input:
//! trailing samples that do not fill a whole frame are dropped, so every
//! stage that uses the same `(frame_len, hop)` grid sees the same frame
//! count for the same signal length.

pub mod wav;

use num_complex::Complex64;
use rustfft::FftPlanner;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DspError {
    #[error("insufficient samples: need at least {needed}, got {got}")]
    InsufficientSamples { needed: usize, got: usize },
    #[error("nfft must be a nonzero power of two, got {0}")]
    NonPowerOfTwoFft(usize),
    #[error("frame_len {frame_len} must be in 1..={nfft} (nfft)")]
    BadFrameLen { frame_len: usize, nfft: usize },
    #[error("hop must be at least 1")]
    ZeroHop,
    #[error("channel {channel} out of range for {channels}-channel buffer")]
    ChannelOutOfRange { channel: usize, channels: usize },
    #[error("channels must be non-empty and of equal length")]
    MismatchedChannels,
    #[error("waveform contains a non-finite sample")]
    NonFiniteSample,
    #[error("wav: {0}")]
    Wav(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, DspError>;

/// Multichannel time-domain signal at a fixed sample rate.
///
/// Channels are stored deinterleaved and must have equal length. Samples
/// must be finite; amplitudes are nominally in [-1, 1] but are not clipped.
#[derive(Debug, Clone, PartialEq)]
pub struct WaveBuffer {
    channels: Vec<Vec<f64>>,
    sample_rate: u32,
}

impl WaveBuffer {
    pub fn new(channels: Vec<Vec<f64>>, sample_rate: u32) -> Result<Self> {
        if channels.is_empty() {
            return Err(DspError::MismatchedChannels);
        }
        let len = channels[0].len();
        if channels.iter().any(|c| c.len() != len) {
            return Err(DspError::MismatchedChannels);
        }
        if channels.iter().any(|c| c.iter().any(|x| !x.is_finite())) {
            return Err(DspError::NonFiniteSample);
        }
        Ok(WaveBuffer { channels, sample_rate })
    }

    pub fn mono(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        Self::new(vec![samples], sample_rate)
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn num_channels(&self) -> usize {
        self.channels.len()
    }

    pub fn num_samples(&self) -> usize {
        self.channels[0].len()
    }

    pub fn channel(&self, m: usize) -> &[f64] {
        &self.channels[m]
    }

    pub fn channels(&self) -> &[Vec<f64>] {
        &self.channels
    }

    /// Single-channel view of channel `m` as a new buffer.
    pub fn extract_channel(&self, m: usize) -> Result<WaveBuffer> {
        if m >= self.channels.len() {
            return Err(DspError::ChannelOutOfRange { channel: m, channels: self.channels.len() });
        }
        WaveBuffer::new(vec![self.channels[m].clone()], self.sample_rate)
    }

    /// Buffer restricted to the given channel indices, in the given order.
    pub fn select_channels(&self, indices: &[usize]) -> Result<WaveBuffer> {
        let mut picked = Vec::with_capacity(indices.len());
        for &m in indices {
            if m >= self.channels.len() {
                return Err(DspError::ChannelOutOfRange { channel: m, channels: self.channels.len() });
            }
            picked.push(self.channels[m].clone());
        }
        WaveBuffer::new(picked, self.sample_rate)
    }
}

/// Analysis window shape. `Hann` is the periodic variant,
/// `w[n] = 0.5 * (1 - cos(2*pi*n / N))`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WindowKind {
    Hann,
    Rect,
}

/// Window coefficients of length `n`.
pub fn window_values(kind: WindowKind, n: usize) -> Vec<f64> {
    match kind {
        WindowKind::Rect => vec![1.0; n],
        WindowKind::Hann => (0..n)
            .map(|i| 0.5 * (1.0 - (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos()))
            .collect(),
    }
}

/// Number of whole frames for `num_samples` on a `(frame_len, hop)` grid:
/// `floor((num_samples - frame_len) / hop) + 1`, requiring at least one frame.
pub fn frame_count(num_samples: usize, frame_len: usize, hop: usize) -> Result<usize> {
    if hop == 0 {
        return Err(DspError::ZeroHop);
    }
    if num_samples < frame_len || frame_len == 0 {
        return Err(DspError::InsufficientSamples { needed: frame_len, got: num_samples });
    }
    Ok((num_samples - frame_len) / hop + 1)
}

/// Complex STFT of every channel of a [`WaveBuffer`].
///
/// Bin `(m, l, f)` holds the DFT of frame `l` of channel `m` at bin `f`,
/// keeping the `nfft / 2 + 1` non-negative frequencies. Frames are windowed
/// and zero-padded to `nfft`; no normalization is applied.
#[derive(Debug, Clone)]
pub struct Spectrogram {
    bins: Vec<Complex64>,
    num_channels: usize,
    num_frames: usize,
    num_bins: usize,
    frame_len: usize,
    hop: usize,
    nfft: usize,
    sample_rate: u32,
}

impl Spectrogram {
    /// Wraps precomputed bins; mainly for synthetic inputs in tests.
    #[allow(clippy::too_many_arguments)]
    pub fn from_bins(
        bins: Vec<Complex64>,
        num_channels: usize,
        num_frames: usize,
        num_bins: usize,
        frame_len: usize,
        hop: usize,
        nfft: usize,
        sample_rate: u32,
    ) -> Result<Self> {
        if bins.len() != num_channels * num_frames * num_bins || num_channels == 0 {
            return Err(DspError::MismatchedChannels);
        }
        Ok(Spectrogram {
            bins,
            num_channels,
            num_frames,
            num_bins,
            frame_len,
            hop,
            nfft,
            sample_rate,
        })
    }

    pub fn num_channels(&self) -> usize {
        self.num_channels
    }

    pub fn num_frames(&self) -> usize {
        self.num_frames
    }

    pub fn num_bins(&self) -> usize {
        self.num_bins
    }

    pub fn frame_len(&self) -> usize {
        self.frame_len
    }

    pub fn hop(&self) -> usize {
        self.hop
    }

    pub fn nfft(&self) -> usize {
        self.nfft
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    /// Center frequency of bin `f` in Hz.
    pub fn bin_hz(&self, f: usize) -> f64 {
        f as f64 * self.sample_rate as f64 / self.nfft as f64
    }

    pub fn at(&self, m: usize, l: usize, f: usize) -> Complex64 {
        debug_assert!(m < self.num_channels && l < self.num_frames && f < self.num_bins);
        self.bins[(m * self.num_frames + l) * self.num_bins + f]
    }

    /// All bins of frame `l` of channel `m`.
    pub fn frame(&self, m: usize, l: usize) -> &[Complex64] {
        let start = (m * self.num_frames + l) * self.num_bins;
        &self.bins[start..start + self.num_bins]
    }
}

/// STFT of every channel with the given framing.
///
/// Requires `nfft` a power of two, `1 <= frame_len <= nfft`, `hop >= 1`,
/// and at least one whole frame of samples.
pub fn stft(wave: &WaveBuffer, frame_len: usize, hop: usize, nfft: usize, window: WindowKind) -> Result<Spectrogram> {
    if !nfft.is_power_of_two() {
        return Err(DspError::NonPowerOfTwoFft(nfft));
    }
    if frame_len == 0 || frame_len > nfft {
        return Err(DspError::BadFrameLen { frame_len, nfft });
    }
    let num_frames = frame_count(wave.num_samples(), frame_len, hop)?;
    let num_bins = nfft / 2 + 1;
    let win = window_values(window, frame_len);

    let mut planner = FftPlanner::<f64>::new();
    let fft = planner.plan_fft_forward(nfft);
    let mut buf = vec![Complex64::new(0.0, 0.0); nfft];
    let mut bins = Vec::with_capacity(wave.num_channels() * num_frames * num_bins);

    for m in 0..wave.num_channels() {
        let samples = wave.channel(m);
        for l in 0..num_frames {
            let start = l * hop;
            for (i, slot) in buf.iter_mut().enumerate() {
                let x = if i < frame_len { samples[start + i] * win[i] } else { 0.0 };
                *slot = Complex64::new(x, 0.0);
            }
            fft.process(&mut buf);
            bins.extend_from_slice(&buf[..num_bins]);
        }
    }

    Ok(Spectrogram {
        bins,
        num_channels: wave.num_channels(),
        num_frames,
        num_bins,
        frame_len,
        hop,
        nfft,
        sample_rate: wave.sample_rate(),
    })
}

/// Per-frame signal energy of one channel on the `(frame_len, hop)` grid:
/// `sum(x[n]^2)` over each frame, unwindowed. Uses the same framing rule as
/// [`stft`], so energies align one-to-one with STFT frames.
pub fn frame_energy(wave: &WaveBuffer, channel: usize, frame_len: usize, hop: usize) -> Result<Vec<f64>> {
    if channel >= wave.num_channels() {
        return Err(DspError::ChannelOutOfRange { channel, channels: wave.num_channels() });
    }
    let num_frames = frame_count(wave.num_samples(), frame_len, hop)?;
    let samples = wave.channel(channel);
    let mut out = Vec::with_capacity(num_frames);
    for l in 0..num_frames {
        let start = l * hop;
        let e: f64 = samples[start..start + frame_len].iter().map(|x| x * x).sum();
        out.push(e);
    }
    Ok(out)
}

/// Full linear convolution of `x` with `h`, length `x.len() + h.len() - 1`.
///
/// Runs in the frequency domain with an FFT sized to the next power of two,
/// so long room responses stay cheap. Both inputs must be non-empty.
pub fn convolve(x: &[f64], h: &[f64]) -> Result<Vec<f64>> {
    if x.is_empty() || h.is_empty() {
        return Err(DspError::InsufficientSamples { needed: 1, got: 0 });
    }
    let out_len = x.len() + h.len() - 1;
    let nfft = out_len.next_power_of_two();
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(nfft);
    let inv = planner.plan_fft_inverse(nfft);

    let mut xa = vec![Complex64::new(0.0, 0.0); nfft];
    for (slot, &v) in xa.iter_mut().zip(x.iter()) {
        slot.re = v;
    }
    let mut ha = vec![Complex64::new(0.0, 0.0); nfft];
    for (slot, &v) in ha.iter_mut().zip(h.iter()) {
        slot.re = v;
    }
    fwd.process(&mut xa);
    fwd.process(&mut ha);
    for (a, b) in xa.iter_mut().zip(ha.iter()) {
        *a *= b;
    }
    inv.process(&mut xa);
    let scale = 1.0 / nfft as f64;
    Ok(xa[..out_len].iter().map(|c| c.re * scale).collect())
}
