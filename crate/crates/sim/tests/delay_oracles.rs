//! Geometric oracles for the synthesized room responses: inter-channel
//! delays must match the array geometry to sub-sample accuracy.

use coher_sim::{make_geometry, source_position, synth_rir, GeometryKind, SPEED_OF_SOUND_M_S};

/// Sub-sample delay of `b` relative to `a` from the cross-correlation peak.
///
/// The inputs are bandlimited, so the correlation sequence is too; a plain
/// parabola is biased on its sinc-shaped main lobe. Instead the sequence is
/// sinc-interpolated on a fine grid around the integer peak.
fn measured_delay(a: &[f64], b: &[f64]) -> f64 {
    let max_lag = 48i64;
    let xcorr = |lag: i64| -> f64 {
        let mut acc = 0.0;
        for (i, &av) in a.iter().enumerate() {
            let j = i as i64 + lag;
            if j >= 0 && (j as usize) < b.len() {
                acc += av * b[j as usize];
            }
        }
        acc
    };
    let c: Vec<f64> = (-max_lag..=max_lag).map(xcorr).collect();
    let peak = c.iter().enumerate().max_by(|x, y| x.1.total_cmp(y.1)).unwrap().0 as i64;

    let sinc = |x: f64| -> f64 {
        if x.abs() < 1e-12 {
            1.0
        } else {
            let px = std::f64::consts::PI * x;
            px.sin() / px
        }
    };
    let interp = |tau: f64| -> f64 {
        (peak - 16..=peak + 16)
            .filter(|&k| k >= 0 && (k as usize) < c.len())
            .map(|k| c[k as usize] * sinc(tau - k as f64))
            .sum()
    };
    let mut best = (peak as f64, f64::MIN);
    let mut tau = peak as f64 - 1.0;
    while tau <= peak as f64 + 1.0 {
        let v = interp(tau);
        if v > best.1 {
            best = (tau, v);
        }
        tau += 1e-3;
    }
    best.0 - max_lag as f64
}

#[test]
fn equidistant_mics_see_zero_delay_difference() {
    // Symmetric pair about the y-axis, source on the y-axis.
    let g = make_geometry(GeometryKind::Linear { count: 2, spacing_m: 0.1 }).unwrap();
    let rir = synth_rir(&g, source_position(0.0, 2.0), 0.0, 16000, 1, 3.0).unwrap();
    let delay = measured_delay(rir.taps(0), rir.taps(1));
    assert!(delay.abs() < 1e-6, "delay {delay}");
}

#[test]
fn far_field_delay_matches_d_sin_theta_over_c() {
    let spacing = 0.05;
    let g = make_geometry(GeometryKind::Linear { count: 2, spacing_m: spacing }).unwrap();
    let fs = 16000.0;
    for theta_deg in [-60.0, -30.0, -10.0, 0.0, 15.0, 45.0, 75.0] {
        let rir = synth_rir(&g, source_position(theta_deg, 30.0), 0.0, 16000, 1, 3.0).unwrap();
        // Mic 1 sits at +x; positive angles swing the source toward +x,
        // shortening its path, so mic 1 leads by d sin(theta) / c.
        let expected = spacing * f64::to_radians(theta_deg).sin() / SPEED_OF_SOUND_M_S * fs;
        let measured = -measured_delay(rir.taps(0), rir.taps(1));
        assert!(
            (measured - expected).abs() < 0.1,
            "theta {theta_deg}: measured {measured}, expected {expected}"
        );
    }
}

#[test]
fn circular_pair_delay_matches_exact_path_difference() {
    let g = coher_sim::preset("circ_m2b").unwrap();
    let fs = 16000.0;
    let src = source_position(25.0, 1.5);
    let rir = synth_rir(&g, src, 0.0, 16000, 1, 3.0).unwrap();
    let d = |p: [f64; 3]| ((src[0] - p[0]).powi(2) + (src[1] - p[1]).powi(2) + (src[2] - p[2]).powi(2)).sqrt();
    let expected = (d(g.positions[1]) - d(g.positions[0])) / SPEED_OF_SOUND_M_S * fs;
    let measured = measured_delay(rir.taps(0), rir.taps(1));
    assert!((measured - expected).abs() < 0.1, "measured {measured}, expected {expected}");
}
