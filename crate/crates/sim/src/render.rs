//! Scene rendering: dry sources through room responses into a calibrated
//! multichannel mixture.
//!
//! Level conventions, all measured at the reference microphone: the target
//! image anchors everything; the competing speaker is scaled to match the
//! target's power (each over its own utterance span); the interferer is
//! scaled against the target during the target span; sensor noise is white
//! Gaussian per channel at the requested SNR versus the target. Noise and
//! interferer scales use empirically measured powers, so the rendered
//! ratios hit the spec values exactly rather than only in expectation.

use crate::rir::synth_rir;
use crate::scene::{SceneSpec, SourceRole};
use crate::source::{speaker_profile, speech_like};
use crate::{source_position, stream_seed, Result, SimError};
use coher_dsp::{convolve, WaveBuffer};
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};

/// Sample rate of every generated dataset item.
pub const DATASET_SAMPLE_RATE: u32 = 16_000;

/// Direct-to-reverberant energy ratio of synthesized room responses.
pub const DEFAULT_DRR_DB: f64 = 3.0;

/// Dry (unconvolved) source signals, already placed on the clip timeline:
/// speakers occupy their spans, the interferer runs continuously.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneWaves {
    pub target: Vec<f64>,
    pub non_target: Vec<f64>,
    pub interferer: Vec<f64>,
    pub sample_rate: u32,
}

/// Per-component signals at the reference microphone after scaling; their
/// sum plus the other channels' counterparts is the mixture.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceImages {
    pub target: Vec<f64>,
    pub non_target: Vec<f64>,
    pub interferer: Vec<f64>,
    pub noise: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RenderedScene {
    pub mixture: WaveBuffer,
    /// Reverberant target at the reference microphone, for labeling.
    pub clean_target: Vec<f64>,
    pub reference_images: ReferenceImages,
    pub measured_sir_db: f64,
    /// Target-to-competing-speaker ratio; 0 dB by construction.
    pub measured_pair_db: f64,
    pub measured_snr_db: f64,
}

fn clip_samples(spec: &SceneSpec, sample_rate: u32) -> usize {
    (spec.duration_s * sample_rate as f64).round() as usize
}

/// Generates the three dry source signals of a scene from its speaker
/// profiles and utterance schedule.
pub fn synthesize_sources(spec: &SceneSpec, sample_rate: u32) -> Result<SceneWaves> {
    spec.validate()?;
    let n = clip_samples(spec, sample_rate);

    let mut target = vec![0.0; n];
    let (t0, t1) = spec.target_span.sample_range(sample_rate);
    let t_wave = speech_like(
        &speaker_profile(spec.target_profile),
        t1.min(n) - t0,
        sample_rate,
        stream_seed(spec.seed, "wave-target"),
        true,
    );
    target[t0..t0 + t_wave.len()].copy_from_slice(&t_wave);

    let mut non_target = vec![0.0; n];
    let (u0, u1) = spec.non_target_span.sample_range(sample_rate);
    let u_wave = speech_like(
        &speaker_profile(spec.non_target_profile),
        u1.min(n) - u0,
        sample_rate,
        stream_seed(spec.seed, "wave-non-target"),
        true,
    );
    non_target[u0..u0 + u_wave.len()].copy_from_slice(&u_wave);

    let interferer = speech_like(
        &speaker_profile(spec.interferer_profile),
        n,
        sample_rate,
        stream_seed(spec.seed, "wave-interferer"),
        false,
    );

    Ok(SceneWaves { target, non_target, interferer, sample_rate })
}

/// Mean square of `x` over `[lo, hi)`.
fn power(x: &[f64], lo: usize, hi: usize) -> f64 {
    let hi = hi.min(x.len());
    if lo >= hi {
        return 0.0;
    }
    x[lo..hi].iter().map(|v| v * v).sum::<f64>() / (hi - lo) as f64
}

/// Convolves a dry wave with each microphone's response, truncated to the
/// clip length.
fn spatialize(wave: &[f64], spec: &SceneSpec, role: SourceRole, sample_rate: u32, n: usize) -> Result<Vec<Vec<f64>>> {
    let placement = spec.source(role)?;
    let tag = match role {
        SourceRole::Target => "rir-target",
        SourceRole::NonTarget => "rir-non-target",
        SourceRole::Interferer => "rir-interferer",
    };
    let rir = synth_rir(
        &spec.geometry,
        source_position(placement.azimuth_deg, placement.distance_m),
        spec.t60_s,
        sample_rate,
        stream_seed(spec.seed, tag),
        DEFAULT_DRR_DB,
    )?;
    let mut images = Vec::with_capacity(rir.num_mics());
    for m in 0..rir.num_mics() {
        let mut y = convolve(wave, rir.taps(m))?;
        y.truncate(n);
        y.resize(n, 0.0);
        images.push(y);
    }
    Ok(images)
}

/// Renders a scene into the calibrated mixture plus labeling material.
pub fn render_scene(spec: &SceneSpec, waves: &SceneWaves) -> Result<RenderedScene> {
    spec.validate()?;
    let sample_rate = waves.sample_rate;
    let n = clip_samples(spec, sample_rate);
    for w in [&waves.target, &waves.non_target, &waves.interferer] {
        if w.len() != n {
            return Err(SimError::LengthMismatch { expected: n, got: w.len() });
        }
    }

    let t_img = spatialize(&waves.target, spec, SourceRole::Target, sample_rate, n)?;
    let nt_img = spatialize(&waves.non_target, spec, SourceRole::NonTarget, sample_rate, n)?;
    let i_img = spatialize(&waves.interferer, spec, SourceRole::Interferer, sample_rate, n)?;
    let mics = spec.geometry.num_mics();

    let (t0, t1) = spec.target_span.sample_range(sample_rate);
    let (u0, u1) = spec.non_target_span.sample_range(sample_rate);
    let p_target = power(&t_img[0], t0, t1);
    let p_non_target = power(&nt_img[0], u0, u1);
    // The interferer plays throughout; its level during the target span is
    // what competes with the target, so SIR is defined over that window.
    let p_interferer = power(&i_img[0], t0, t1);
    if p_target < 1e-20 {
        return Err(SimError::SilentSource("target"));
    }
    if p_non_target < 1e-20 {
        return Err(SimError::SilentSource("non-target"));
    }
    if p_interferer < 1e-20 {
        return Err(SimError::SilentSource("interferer"));
    }

    let nt_scale = (p_target / p_non_target).sqrt();
    let i_scale = (p_target / (p_interferer * 10f64.powf(spec.sir_db / 10.0))).sqrt();
    let p_noise = p_target * 10f64.powf(-spec.snr_db / 10.0);

    let mut channels = Vec::with_capacity(mics);
    let mut noise_ref = Vec::new();
    for m in 0..mics {
        let mut rng = ChaCha12Rng::seed_from_u64(
            stream_seed(spec.seed, "noise").wrapping_add((m as u64).wrapping_mul(0x9e3779b97f4a7c15)),
        );
        let mut noise: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
        let raw_power = power(&noise, 0, n);
        let noise_scale = (p_noise / raw_power).sqrt();
        for v in &mut noise {
            *v *= noise_scale;
        }

        let ch: Vec<f64> = (0..n)
            .map(|i| t_img[m][i] + nt_scale * nt_img[m][i] + i_scale * i_img[m][i] + noise[i])
            .collect();
        channels.push(ch);
        if m == 0 {
            noise_ref = noise;
        }
    }

    let scaled_nt: Vec<f64> = nt_img[0].iter().map(|v| v * nt_scale).collect();
    let scaled_i: Vec<f64> = i_img[0].iter().map(|v| v * i_scale).collect();
    let measured_sir_db = 10.0 * (p_target / power(&scaled_i, t0, t1)).log10();
    let measured_pair_db = 10.0 * (p_target / power(&scaled_nt, u0, u1)).log10();
    let measured_snr_db = 10.0 * (p_target / power(&noise_ref, 0, n)).log10();

    Ok(RenderedScene {
        mixture: WaveBuffer::new(channels, sample_rate)?,
        clean_target: t_img[0].clone(),
        reference_images: ReferenceImages {
            target: t_img.into_iter().next().expect("at least one mic"),
            non_target: scaled_nt,
            interferer: scaled_i,
            noise: noise_ref,
        },
        measured_sir_db,
        measured_pair_db,
        measured_snr_db,
    })
}

/// Synthesizes the sources of `spec` and renders them in one step.
pub fn simulate_scene(spec: &SceneSpec) -> Result<RenderedScene> {
    let waves = synthesize_sources(spec, DATASET_SAMPLE_RATE)?;
    render_scene(spec, &waves)
}
