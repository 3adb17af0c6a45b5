//! Checks the FFT-backed STFT against a direct O(N^2) DFT and classical
//! transform identities, with expected values computed independently of
//! the implementation under test.

use num_complex::Complex64;
use coher_dsp::{frame_count, frame_energy, stft, window_values, WaveBuffer, WindowKind};

fn lcg(state: &mut u64) -> f64 {
    // Small deterministic generator so the oracle inputs are fixed.
    *state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
    ((*state >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
}

fn direct_dft(frame: &[f64], nfft: usize, bin: usize) -> Complex64 {
    let mut acc = Complex64::new(0.0, 0.0);
    for (n, &x) in frame.iter().enumerate() {
        let phase = -2.0 * std::f64::consts::PI * bin as f64 * n as f64 / nfft as f64;
        acc += Complex64::new(phase.cos(), phase.sin()) * x;
    }
    acc
}

#[test]
fn stft_matches_direct_dft() {
    let mut state = 0x5EED;
    let samples: Vec<f64> = (0..1000).map(|_| lcg(&mut state)).collect();
    let wave = WaveBuffer::mono(samples.clone(), 16000).unwrap();
    let spec = stft(&wave, 400, 160, 512, WindowKind::Hann).unwrap();
    let win = window_values(WindowKind::Hann, 400);

    assert_eq!(spec.num_frames(), frame_count(1000, 400, 160).unwrap());
    for l in 0..spec.num_frames() {
        let windowed: Vec<f64> =
            (0..400).map(|i| samples[l * 160 + i] * win[i]).collect();
        for f in [0usize, 1, 17, 128, 255, 256] {
            let want = direct_dft(&windowed, 512, f);
            let got = spec.at(0, l, f);
            let err = (got - want).norm();
            assert!(err < 1e-9, "frame {l} bin {f}: |{got} - {want}| = {err}");
        }
    }
}

#[test]
fn pure_tone_concentrates_at_its_bin() {
    // 16000 * 40 / 512 = 1250 Hz sits exactly on bin 40 for a 512-sample
    // rectangular frame, so all energy lands there.
    let fs = 16000.0;
    let tone_hz = 1250.0;
    let samples: Vec<f64> =
        (0..2048).map(|n| (2.0 * std::f64::consts::PI * tone_hz * n as f64 / fs).sin()).collect();
    let wave = WaveBuffer::mono(samples, 16000).unwrap();
    let spec = stft(&wave, 512, 512, 512, WindowKind::Rect).unwrap();

    let peak = spec.at(0, 0, 40).norm();
    assert!((peak - 256.0).abs() < 1e-6, "peak magnitude {peak}");
    for f in 0..257 {
        if f != 40 {
            assert!(spec.at(0, 0, f).norm() < 1e-6, "leakage at bin {f}");
        }
    }
    assert!((spec.bin_hz(40) - 1250.0).abs() < 1e-12);
}

#[test]
fn parseval_energy_identity() {
    // For frame_len == nfft: sum |X[k]|^2 over all nfft bins equals
    // nfft * sum x[n]^2. Reconstruct the negative bins by symmetry.
    let mut state = 0xACCE55;
    let samples: Vec<f64> = (0..512).map(|_| lcg(&mut state)).collect();
    let wave = WaveBuffer::mono(samples.clone(), 16000).unwrap();
    let spec = stft(&wave, 512, 512, 512, WindowKind::Hann).unwrap();
    let win = window_values(WindowKind::Hann, 512);

    let time_energy: f64 = samples.iter().zip(win.iter()).map(|(x, w)| (x * w).powi(2)).sum();
    let mut freq_energy = spec.at(0, 0, 0).norm_sqr() + spec.at(0, 0, 256).norm_sqr();
    for f in 1..256 {
        freq_energy += 2.0 * spec.at(0, 0, f).norm_sqr();
    }
    let rel = (freq_energy / 512.0 - time_energy).abs() / time_energy;
    assert!(rel < 1e-12, "relative Parseval error {rel}");
}

#[test]
fn stft_is_linear() {
    let mut state = 0x11;
    let a: Vec<f64> = (0..720).map(|_| lcg(&mut state)).collect();
    let b: Vec<f64> = (0..720).map(|_| lcg(&mut state)).collect();
    let sum: Vec<f64> = a.iter().zip(b.iter()).map(|(x, y)| 0.7 * x + 1.3 * y).collect();

    let sa = stft(&WaveBuffer::mono(a, 16000).unwrap(), 400, 160, 512, WindowKind::Hann).unwrap();
    let sb = stft(&WaveBuffer::mono(b, 16000).unwrap(), 400, 160, 512, WindowKind::Hann).unwrap();
    let ss = stft(&WaveBuffer::mono(sum, 16000).unwrap(), 400, 160, 512, WindowKind::Hann).unwrap();

    for l in 0..ss.num_frames() {
        for f in (0..257).step_by(13) {
            let want = sa.at(0, l, f) * 0.7 + sb.at(0, l, f) * 1.3;
            assert!((ss.at(0, l, f) - want).norm() < 1e-9);
        }
    }
}

#[test]
fn scaling_by_two_is_bitwise() {
    // Doubling every sample doubles every bin exactly in binary floating point.
    let mut state = 0x22;
    let a: Vec<f64> = (0..560).map(|_| lcg(&mut state)).collect();
    let doubled: Vec<f64> = a.iter().map(|x| 2.0 * x).collect();
    let sa = stft(&WaveBuffer::mono(a, 16000).unwrap(), 400, 160, 512, WindowKind::Hann).unwrap();
    let sd =
        stft(&WaveBuffer::mono(doubled, 16000).unwrap(), 400, 160, 512, WindowKind::Hann).unwrap();
    for l in 0..sa.num_frames() {
        for f in 0..257 {
            assert_eq!(sd.at(0, l, f), sa.at(0, l, f) * 2.0);
        }
    }
}

#[test]
fn frame_energy_matches_direct_sum() {
    let mut state = 0x33;
    let samples: Vec<f64> = (0..1234).map(|_| lcg(&mut state)).collect();
    let wave = WaveBuffer::mono(samples.clone(), 16000).unwrap();
    let got = frame_energy(&wave, 0, 400, 160).unwrap();
    let frames = frame_count(1234, 400, 160).unwrap();
    assert_eq!(got.len(), frames);
    for l in 0..frames {
        let want: f64 = samples[l * 160..l * 160 + 400].iter().map(|x| x * x).sum();
        assert_eq!(got[l], want);
    }
}

#[test]
fn multichannel_stft_keeps_channels_independent() {
    let mut state = 0x44;
    let a: Vec<f64> = (0..800).map(|_| lcg(&mut state)).collect();
    let b: Vec<f64> = (0..800).map(|_| lcg(&mut state)).collect();
    let multi =
        stft(&WaveBuffer::new(vec![a.clone(), b.clone()], 16000).unwrap(), 400, 160, 512, WindowKind::Hann)
            .unwrap();
    let solo_a = stft(&WaveBuffer::mono(a, 16000).unwrap(), 400, 160, 512, WindowKind::Hann).unwrap();
    let solo_b = stft(&WaveBuffer::mono(b, 16000).unwrap(), 400, 160, 512, WindowKind::Hann).unwrap();
    for l in 0..multi.num_frames() {
        assert_eq!(multi.frame(0, l), solo_a.frame(0, l));
        assert_eq!(multi.frame(1, l), solo_b.frame(0, l));
    }
}

mod properties {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #![proptest_config(ProptestConfig { cases: 48, ..ProptestConfig::default() })]

        /// The frame count is the largest tiling: every counted frame fits
        /// inside the signal and one more would run past the end.
        #[test]
        fn frame_count_is_the_largest_tiling(
            frame_len in 2usize..64,
            hop in 1usize..32,
            extra in 0usize..200,
        ) {
            let n = frame_len + extra;
            let frames = frame_count(n, frame_len, hop).unwrap();
            prop_assert!(frames >= 1);
            prop_assert!((frames - 1) * hop + frame_len <= n);
            prop_assert!(frames * hop + frame_len > n);
        }

        /// Periodic windows pair sample i with sample n - i; the unpaired
        /// first Hann sample is the zero endpoint. All values sit in [0, 1].
        #[test]
        fn windows_have_periodic_symmetry(
            n in 1usize..600,
            hann in any::<bool>(),
        ) {
            let kind = if hann { WindowKind::Hann } else { WindowKind::Rect };
            let w = window_values(kind, n);
            prop_assert_eq!(w.len(), n);
            if hann && n > 1 {
                prop_assert!(w[0].abs() < 1e-15);
            }
            for i in 1..n {
                prop_assert!((w[i] - w[n - i]).abs() < 1e-12);
                prop_assert!((0.0..=1.0).contains(&w[i]));
            }
        }

        /// Parseval's identity for a full-length frame: spectrum energy
        /// (negative bins restored by conjugate symmetry) equals nfft times
        /// the windowed time energy.
        #[test]
        fn parseval_holds_for_random_signals(seed in any::<u64>(), use_hann in any::<bool>()) {
            let mut state = seed | 1;
            let samples: Vec<f64> = (0..256).map(|_| lcg(&mut state)).collect();
            let kind = if use_hann { WindowKind::Hann } else { WindowKind::Rect };
            let wave = WaveBuffer::mono(samples.clone(), 16000).unwrap();
            let spec = stft(&wave, 256, 256, 256, kind).unwrap();
            let win = window_values(kind, 256);

            let time: f64 = samples.iter().zip(&win).map(|(x, w)| (x * w).powi(2)).sum();
            let mut freq = spec.at(0, 0, 0).norm_sqr() + spec.at(0, 0, 128).norm_sqr();
            for f in 1..128 {
                freq += 2.0 * spec.at(0, 0, f).norm_sqr();
            }
            prop_assert!((freq / 256.0 - time).abs() <= 1e-12 * time.max(1.0));
        }

        /// Single-precision waves survive a WAV write/read cycle exactly.
        #[test]
        fn wav_round_trip_is_exact(
            seed in any::<u64>(),
            channels in 1usize..=8,
            samples in 1usize..400,
        ) {
            let mut state = seed | 1;
            let chans: Vec<Vec<f64>> = (0..channels)
                .map(|_| (0..samples).map(|_| lcg(&mut state) as f32 as f64).collect())
                .collect();
            let wave = WaveBuffer::new(chans, 16000).unwrap();

            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("prop.wav");
            coher_dsp::wav::write_wav_f32(&path, &wave).unwrap();
            let back = coher_dsp::wav::read_wav(&path).unwrap();

            prop_assert_eq!(back.sample_rate(), 16000);
            prop_assert_eq!(back.num_channels(), channels);
            for m in 0..channels {
                prop_assert_eq!(back.channel(m), wave.channel(m));
            }
        }
    }
}
