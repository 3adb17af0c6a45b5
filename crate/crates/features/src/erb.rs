//! Auditory band pooling on the ERB-rate scale.
//!
//! Band centers are spaced uniformly in ERB-rate between 50 Hz and the
//! Nyquist frequency. Each band applies a triangular weight in ERB-rate;
//! the two outer bands are clamped to 1 beyond their centers so the weights
//! form a partition of unity over every STFT bin, DC and Nyquist included.

use crate::{FeatError, Result};

/// ERB-rate (band index on the auditory scale) of a frequency in Hz:
/// `21.4 * log10(4.37 * f_kHz + 1)`.
pub fn erb_rate(hz: f64) -> f64 {
    21.4 * (4.37 * hz / 1000.0 + 1.0).log10()
}

/// Triangular pooling matrix from `nfft/2 + 1` STFT bins onto `bands`
/// auditory bands.
#[derive(Debug, Clone, PartialEq)]
pub struct ErbFilterbank {
    // Row-major (band, bin).
    weights: Vec<f64>,
    centers_hz: Vec<f64>,
    // Per-band weight sums; normalizer for coherence pooling.
    band_sums: Vec<f64>,
    num_bands: usize,
    num_bins: usize,
}

/// Lowest band center in Hz.
const LOW_EDGE_HZ: f64 = 50.0;

/// Builds the pooling matrix for an STFT with the given geometry.
pub fn build_erb_filterbank(nfft: usize, sample_rate: u32, bands: usize) -> Result<ErbFilterbank> {
    let num_bins = nfft / 2 + 1;
    if bands < 2 || bands > num_bins {
        return Err(FeatError::BadBands { bands, bins: num_bins });
    }

    let e_low = erb_rate(LOW_EDGE_HZ);
    let e_high = erb_rate(sample_rate as f64 / 2.0);
    let step = (e_high - e_low) / (bands - 1) as f64;
    let centers_erb: Vec<f64> = (0..bands).map(|b| e_low + b as f64 * step).collect();
    let centers_hz: Vec<f64> =
        centers_erb.iter().map(|e| ((10f64.powf(e / 21.4) - 1.0) / 4.37) * 1000.0).collect();

    let mut weights = vec![0.0f64; bands * num_bins];
    for f in 0..num_bins {
        let hz = f as f64 * sample_rate as f64 / nfft as f64;
        let e = erb_rate(hz);
        for b in 0..bands {
            let d = (e - centers_erb[b]) / step;
            let w = if (b == 0 && d <= 0.0) || (b == bands - 1 && d >= 0.0) {
                // Outer bands own everything beyond their centers.
                1.0
            } else {
                (1.0 - d.abs()).max(0.0)
            };
            weights[b * num_bins + f] = w;
        }
    }

    let mut band_sums = Vec::with_capacity(bands);
    for b in 0..bands {
        let sum: f64 = weights[b * num_bins..(b + 1) * num_bins].iter().sum();
        if sum <= 0.0 {
            return Err(FeatError::EmptyBand(b));
        }
        band_sums.push(sum);
    }

    Ok(ErbFilterbank { weights, centers_hz, band_sums, num_bands: bands, num_bins })
}

impl ErbFilterbank {
    pub fn num_bands(&self) -> usize {
        self.num_bands
    }

    pub fn num_bins(&self) -> usize {
        self.num_bins
    }

    pub fn centers_hz(&self) -> &[f64] {
        &self.centers_hz
    }

    pub fn weight(&self, band: usize, bin: usize) -> f64 {
        self.weights[band * self.num_bins + bin]
    }

    /// Per-band triangle weight sums.
    pub fn band_sums(&self) -> &[f64] {
        &self.band_sums
    }

    /// Pools a per-bin power frame: `sum_f w_b(f) * p(f)`, unnormalized so
    /// band energy scales with signal energy.
    pub fn pool_power(&self, bins: &[f64]) -> Vec<f64> {
        assert_eq!(bins.len(), self.num_bins, "power frame length");
        let mut out = Vec::with_capacity(self.num_bands);
        for b in 0..self.num_bands {
            let row = &self.weights[b * self.num_bins..(b + 1) * self.num_bins];
            out.push(row.iter().zip(bins.iter()).map(|(w, p)| w * p).sum());
        }
        out
    }

    /// Pools a per-bin coherence frame as a weighted mean:
    /// `sum_f w_b(f) * g(f) / sum_f w_b(f)`, so constants are preserved.
    pub fn pool_coherence(&self, bins: &[f64]) -> Vec<f64> {
        assert_eq!(bins.len(), self.num_bins, "coherence frame length");
        let mut out = Vec::with_capacity(self.num_bands);
        for b in 0..self.num_bands {
            let row = &self.weights[b * self.num_bins..(b + 1) * self.num_bins];
            let sum: f64 = row.iter().zip(bins.iter()).map(|(w, g)| w * g).sum();
            // A convex combination stays inside [-1, 1]; the clamp only
            // absorbs last-bit rounding.
            out.push((sum / self.band_sums[b]).clamp(-1.0, 1.0));
        }
        out
    }
}
