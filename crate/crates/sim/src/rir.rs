//! Synthetic room impulse responses.
//!
//! Each source-to-microphone path is a fractional-delay direct ray (81-tap
//! windowed sinc at the true propagation delay, 1/distance amplitude)
//! optionally followed by an exponentially decaying noise tail whose decay
//! matches the requested reverberation time. Tails are drawn independently
//! per microphone, which models a diffuse late field: the direct path
//! carries the inter-channel phase structure, the tails decorrelate it.

use crate::geometry::ArrayGeometry;
use crate::{Result, SimError};
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};

pub const SPEED_OF_SOUND_M_S: f64 = 343.0;

/// Support of the windowed-sinc direct path.
pub const DIRECT_PATH_TAPS: usize = 81;

/// Constant delay added to every path (3 ms at 16 kHz) so the sinc support
/// never truncates at the start of the response, even for near sources.
pub const BULK_DELAY_SAMPLES: usize = 48;

const HALF_WIDTH: i64 = (DIRECT_PATH_TAPS as i64 - 1) / 2;

/// One impulse response per microphone of a single source.
#[derive(Debug, Clone, PartialEq)]
pub struct Rir {
    taps: Vec<Vec<f64>>,
    sample_rate: u32,
}

impl Rir {
    pub fn num_mics(&self) -> usize {
        self.taps.len()
    }

    pub fn taps(&self, mic: usize) -> &[f64] {
        &self.taps[mic]
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }
}

/// Source coordinates for a frontal-plane placement: 0 degrees is broadside
/// (+y), positive angles swing toward +x, matching the linear arrays' axis.
pub fn source_position(azimuth_deg: f64, distance_m: f64) -> [f64; 3] {
    let th = azimuth_deg.to_radians();
    [distance_m * th.sin(), distance_m * th.cos(), 0.0]
}

/// Synthesizes the impulse responses from one source to every microphone.
///
/// `seed` drives the reverberant tails only; with `t60_s = 0` the output is
/// seed-independent and all energy sits in the direct-path window. The
/// direct-to-reverberant energy ratio is `drr_db` exactly, per microphone.
pub fn synth_rir(
    geometry: &ArrayGeometry,
    source: [f64; 3],
    t60_s: f64,
    sample_rate: u32,
    seed: u64,
    drr_db: f64,
) -> Result<Rir> {
    geometry.validate()?;
    if source.iter().any(|v| !v.is_finite()) {
        return Err(SimError::BadParam("non-finite source position".into()));
    }
    if !(t60_s >= 0.0) || !t60_s.is_finite() {
        return Err(SimError::BadParam(format!("bad t60 {t60_s}")));
    }
    if sample_rate == 0 {
        return Err(SimError::BadParam("zero sample rate".into()));
    }
    if !drr_db.is_finite() {
        return Err(SimError::BadParam(format!("bad direct-to-reverberant ratio {drr_db}")));
    }
    let radius = (source[0] * source[0] + source[1] * source[1] + source[2] * source[2]).sqrt();
    if radius <= geometry.hull_radius() {
        return Err(SimError::SourceInsideArray);
    }

    let fs = sample_rate as f64;
    let mut taps = Vec::with_capacity(geometry.num_mics());
    for (mic, p) in geometry.positions.iter().enumerate() {
        let d = ((source[0] - p[0]).powi(2) + (source[1] - p[1]).powi(2) + (source[2] - p[2]).powi(2)).sqrt();
        if d <= 0.05 {
            return Err(SimError::SourceTooClose { mic, limit_m: 0.05 });
        }
        let delay = BULK_DELAY_SAMPLES as f64 + d / SPEED_OF_SOUND_M_S * fs;
        let base = delay.floor() as i64;
        let direct_end = (base + HALF_WIDTH + 1) as usize;

        let tail_len = if t60_s > 0.0 { (t60_s * fs).ceil() as usize } else { 0 };
        let mut h = vec![0.0; direct_end + tail_len];
        let gain = 1.0 / d;
        for n in base - HALF_WIDTH..=base + HALF_WIDTH {
            let x = n as f64 - delay;
            h[n as usize] = gain * sinc(x) * edge_window(x);
        }

        if tail_len > 0 {
            let mut rng =
                ChaCha12Rng::seed_from_u64(seed.wrapping_add((mic as u64).wrapping_mul(0x9e3779b97f4a7c15)));
            let direct_energy: f64 = h[..direct_end].iter().map(|v| v * v).sum();
            let decay = -3.0 / (t60_s * fs);
            let mut raw = Vec::with_capacity(tail_len);
            let mut raw_energy = 0.0;
            for k in 0..tail_len {
                let noise: f64 = StandardNormal.sample(&mut rng);
                let v = noise * 10f64.powf(decay * k as f64);
                raw_energy += v * v;
                raw.push(v);
            }
            let scale = (direct_energy / (raw_energy * 10f64.powf(drr_db / 10.0))).sqrt();
            for (k, v) in raw.iter().enumerate() {
                h[direct_end + k] = v * scale;
            }
        }
        taps.push(h);
    }
    Ok(Rir { taps, sample_rate })
}

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-12 {
        1.0
    } else {
        let px = std::f64::consts::PI * x;
        px.sin() / px
    }
}

/// Raised-cosine taper over the sinc support, zero at |x| = 41.
fn edge_window(x: f64) -> f64 {
    let half = HALF_WIDTH as f64 + 1.0;
    if x.abs() >= half {
        0.0
    } else {
        0.5 * (1.0 + (std::f64::consts::PI * x / half).cos())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{make_geometry, preset, GeometryKind};

    #[test]
    fn anechoic_energy_is_confined_to_the_direct_window() {
        let g = preset("linear4_5cm").unwrap();
        let rir = synth_rir(&g, source_position(30.0, 2.0), 0.0, 16000, 1, 3.0).unwrap();
        for m in 0..rir.num_mics() {
            let h = rir.taps(m);
            let total: f64 = h.iter().map(|v| v * v).sum();
            assert!(total > 0.0);
            // Everything outside the 81-tap window around the peak is zero.
            let peak = h.iter().enumerate().max_by(|a, b| a.1.abs().total_cmp(&b.1.abs())).unwrap().0;
            let lo = peak.saturating_sub(DIRECT_PATH_TAPS);
            let hi = (peak + DIRECT_PATH_TAPS).min(h.len());
            let outside: f64 =
                h[..lo].iter().chain(h[hi..].iter()).map(|v| v * v).sum();
            assert!(outside < 1e-12 * total);
        }
    }

    #[test]
    fn amplitude_follows_inverse_distance() {
        let g = preset("mono").unwrap();
        let near = synth_rir(&g, source_position(0.0, 1.0), 0.0, 16000, 1, 3.0).unwrap();
        let far = synth_rir(&g, source_position(0.0, 2.0), 0.0, 16000, 1, 3.0).unwrap();
        let e = |r: &Rir| -> f64 { r.taps(0).iter().map(|v| v * v).sum() };
        // Energy scales with 1/d^2; delays differ so compare energies.
        let ratio = e(&near) / e(&far);
        assert!((ratio - 4.0).abs() < 0.05, "ratio {ratio}");
    }

    #[test]
    fn direct_to_reverberant_ratio_is_exact() {
        let g = preset("linear4_5cm").unwrap();
        let rir = synth_rir(&g, source_position(-20.0, 1.0), 0.36, 16000, 9, 3.0).unwrap();
        let fs = 16000.0;
        for m in 0..rir.num_mics() {
            let h = rir.taps(m);
            // The direct window ends where the tail starts: len - t60*fs.
            let tail_start = h.len() - (0.36f64 * fs).ceil() as usize;
            let e_dir: f64 = h[..tail_start].iter().map(|v| v * v).sum();
            let e_tail: f64 = h[tail_start..].iter().map(|v| v * v).sum();
            let drr = 10.0 * (e_dir / e_tail).log10();
            assert!((drr - 3.0).abs() < 1e-9, "mic {m}: {drr}");
        }
    }

    #[test]
    fn tail_envelope_decays_at_the_reverberation_time() {
        let g = preset("mono").unwrap();
        let t60 = 0.16;
        let rir = synth_rir(&g, source_position(0.0, 1.0), t60, 16000, 4, 3.0).unwrap();
        let h = rir.taps(0);
        let tail_start = h.len() - (t60 * 16000.0f64).ceil() as usize;
        let tail = &h[tail_start..];
        // Compare average log-energy of the first and last tenth: the
        // envelope drops 60 dB over the tail, so ~54 dB between the two
        // decade midpoints. Noise makes it approximate.
        let tenth = tail.len() / 10;
        let head: f64 = tail[..tenth].iter().map(|v| v * v).sum();
        let foot: f64 = tail[tail.len() - tenth..].iter().map(|v| v * v).sum();
        let drop_db = 10.0 * (head / foot).log10();
        assert!((drop_db - 54.0).abs() < 6.0, "drop {drop_db}");
    }

    #[test]
    fn peak_arrives_within_fifty_milliseconds() {
        let g = preset("circ_m7").unwrap();
        for distance in [0.5, 1.0, 2.0, 3.0] {
            let rir = synth_rir(&g, source_position(45.0, distance), 0.61, 16000, 2, 3.0).unwrap();
            for m in 0..rir.num_mics() {
                let h = rir.taps(m);
                let peak = h.iter().enumerate().max_by(|a, b| a.1.abs().total_cmp(&b.1.abs())).unwrap().0;
                assert!((peak as f64) < 0.050 * 16000.0, "distance {distance} mic {m}: peak at {peak}");
            }
        }
    }

    #[test]
    fn invalid_placements_are_rejected() {
        let g = preset("linear4_5cm").unwrap();
        assert!(matches!(
            synth_rir(&g, [0.0, 0.04, 0.0], 0.0, 16000, 1, 3.0),
            Err(SimError::SourceInsideArray)
        ));
        assert!(matches!(
            synth_rir(&g, [0.076, 0.0, 0.0], 0.0, 16000, 1, 3.0),
            Err(SimError::SourceTooClose { .. })
        ));
        assert!(synth_rir(&g, source_position(0.0, 1.0), -0.1, 16000, 1, 3.0).is_err());
        assert!(synth_rir(&g, source_position(0.0, 1.0), 0.16, 0, 1, 3.0).is_err());
    }

    #[test]
    fn tails_are_seeded_and_per_mic_independent() {
        let g = make_geometry(GeometryKind::Linear { count: 2, spacing_m: 0.05 }).unwrap();
        let a = synth_rir(&g, source_position(10.0, 1.5), 0.16, 16000, 7, 3.0).unwrap();
        let b = synth_rir(&g, source_position(10.0, 1.5), 0.16, 16000, 7, 3.0).unwrap();
        assert_eq!(a, b);
        let c = synth_rir(&g, source_position(10.0, 1.5), 0.16, 16000, 8, 3.0).unwrap();
        assert_ne!(a, c);
        // Different mics see different tail noise.
        let start0 = a.taps(0).len() - (0.16f64 * 16000.0).ceil() as usize;
        let t0 = &a.taps(0)[start0..start0 + 10];
        let start1 = a.taps(1).len() - (0.16f64 * 16000.0).ceil() as usize;
        let t1 = &a.taps(1)[start1..start1 + 10];
        assert_ne!(t0, t1);
    }
}
