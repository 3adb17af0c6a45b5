//! Speech-like source material.
//!
//! The corpus is synthetic: white noise shaped by three resonators at
//! speaker-specific formant frequencies, amplitude-modulated at a syllabic
//! rate, and broken into word-like bursts with short pauses. That is enough
//! structure for energy labeling and for the detector to tell speakers
//! apart by their band profile, without shipping any recordings.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

/// Number of distinct built-in speaker timbres.
pub const NUM_SPEAKER_PROFILES: u32 = 24;

/// Fixed per-speaker voice description, derived deterministically from the
/// profile id alone so every run agrees on who speaker `k` is.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpeakerProfile {
    pub id: u32,
    /// Resonator centers, low to high, in Hz.
    pub formants_hz: [f64; 3],
    /// Resonator quality factors; higher is peakier.
    pub resonance_q: [f64; 3],
    /// Syllabic amplitude-modulation rate in Hz.
    pub syllable_hz: f64,
}

pub fn speaker_profile(id: u32) -> SpeakerProfile {
    let mut rng = ChaCha12Rng::seed_from_u64(0x70726f66696c65 ^ (id as u64).wrapping_mul(0x9e3779b97f4a7c15));
    SpeakerProfile {
        id,
        formants_hz: [
            rng.random_range(250.0..750.0),
            rng.random_range(900.0..2000.0),
            rng.random_range(2200.0..3600.0),
        ],
        resonance_q: [
            rng.random_range(5.0..11.0),
            rng.random_range(5.0..11.0),
            rng.random_range(5.0..11.0),
        ],
        syllable_hz: rng.random_range(2.5..5.0),
    }
}

/// Second-order bandpass resonator (constant peak gain), direct form II
/// transposed.
struct Biquad {
    b0: f64,
    b2: f64,
    a1: f64,
    a2: f64,
    z1: f64,
    z2: f64,
}

impl Biquad {
    fn bandpass(center_hz: f64, q: f64, sample_rate: f64) -> Biquad {
        let w0 = 2.0 * std::f64::consts::PI * center_hz / sample_rate;
        let alpha = w0.sin() / (2.0 * q);
        let a0 = 1.0 + alpha;
        Biquad {
            b0: alpha / a0,
            b2: -alpha / a0,
            a1: -2.0 * w0.cos() / a0,
            a2: (1.0 - alpha) / a0,
            z1: 0.0,
            z2: 0.0,
        }
    }

    fn process(&mut self, x: f64) -> f64 {
        let y = self.b0 * x + self.z1;
        self.z1 = -self.a1 * y + self.z2;
        self.z2 = self.b2 * x - self.a2 * y;
        y
    }
}

/// Synthesizes `num_samples` of one speaker's voice-like signal.
///
/// With `word_gaps` the signal alternates word bursts (0.25-0.60 s) and
/// silent gaps (0.07-0.18 s) with 10 ms raised-cosine edges, starting on a
/// burst; without, it is continuous (the television-style interferer).
/// Active samples are normalized to a fixed RMS; absolute level is
/// irrelevant because rendering rescales sources against each other.
pub fn speech_like(
    profile: &SpeakerProfile,
    num_samples: usize,
    sample_rate: u32,
    seed: u64,
    word_gaps: bool,
) -> Vec<f64> {
    if num_samples == 0 {
        return Vec::new();
    }
    let fs = sample_rate as f64;
    let mut rng = ChaCha12Rng::seed_from_u64(seed);

    let mut stages: Vec<Biquad> = profile
        .formants_hz
        .iter()
        .zip(profile.resonance_q.iter())
        .map(|(&f, &q)| Biquad::bandpass(f, q, fs))
        .collect();
    let weights = [1.0, 0.6, 0.35];

    let phase: f64 = rng.random_range(0.0..2.0 * std::f64::consts::PI);
    let mut out = Vec::with_capacity(num_samples);
    for i in 0..num_samples {
        let noise: f64 = StandardNormal.sample(&mut rng);
        let mut y = 0.04 * noise;
        for (stage, w) in stages.iter_mut().zip(weights.iter()) {
            y += w * stage.process(noise);
        }
        let t = i as f64 / fs;
        let syllabic = 0.55 - 0.45 * (2.0 * std::f64::consts::PI * profile.syllable_hz * t + phase).cos();
        out.push(y * syllabic);
    }

    if word_gaps {
        apply_word_gating(&mut out, fs, &mut rng);
    }

    let active_ms: f64 = {
        let (sum, n) = out.iter().fold((0.0, 0usize), |(s, n), &x| {
            if x != 0.0 {
                (s + x * x, n + 1)
            } else {
                (s, n)
            }
        });
        if n == 0 {
            return out;
        }
        sum / n as f64
    };
    let gain = 0.1 / active_ms.sqrt().max(1e-12);
    for x in &mut out {
        *x *= gain;
    }
    out
}

/// Multiplies a word/pause gate into `out`: alternating on and off segments
/// with raised-cosine edges so gaps carry exactly zero signal inside.
fn apply_word_gating(out: &mut [f64], fs: f64, rng: &mut ChaCha12Rng) {
    let edge = (0.010 * fs).round() as usize;
    let mut pos = 0usize;
    let mut on = true;
    while pos < out.len() {
        let dur_s: f64 = if on { rng.random_range(0.25..0.60) } else { rng.random_range(0.07..0.18) };
        let len = ((dur_s * fs).round() as usize).max(1).min(out.len() - pos);
        if !on {
            for x in &mut out[pos..pos + len] {
                *x = 0.0;
            }
        } else {
            // Fade edges inside the burst to avoid clicks.
            for k in 0..edge.min(len) {
                let w = 0.5 * (1.0 - (std::f64::consts::PI * k as f64 / edge as f64).cos());
                out[pos + k] *= w;
                out[pos + len - 1 - k] *= w;
            }
        }
        pos += len;
        on = !on;
    }
}
