//! Target-speaker embeddings (d-vectors) that condition the detector.
//!
//! Embeddings are produced elsewhere by a speaker encoder; this crate
//! loads them, aggregates per-window embeddings into one enrollment
//! vector, and offers a deterministic spectral-shape stand-in for
//! desk-scale experiments where no trained encoder is available. The
//! stand-in is not discriminative-grade: tests that rely on speaker
//! separation construct synthetic voices with disjoint spectral support.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use coher_dsp::{stft, WaveBuffer, WindowKind};
use coher_features::{build_erb_filterbank, LOG_FLOOR};
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

/// Default d-vector dimensionality.
pub const DEFAULT_EMBEDDING_DIM: usize = 128;

/// Stored norms may deviate from 1 by this much and still be accepted
/// (after re-normalization).
pub const NORM_TOLERANCE: f64 = 0.01;

/// Norm deviations at or below this are kept bitwise as stored.
pub const NORM_EXACT: f64 = 1e-6;

const MAGIC: &[u8; 4] = b"DVEC";
const VERSION: u32 = 1;

/// Fixed projection seed: the stand-in embedding must be a pure function
/// of the waveform alone.
const PROJECTION_SEED: u64 = 0x64766563;

#[derive(Debug, Error)]
pub enum EmbedError {
    #[error("embedding must be non-empty and finite")]
    BadVector,
    #[error("embedding norm out of tolerance: {0}")]
    NormOutOfTolerance(f64),
    #[error("degenerate aggregate: mean vector is numerically zero")]
    DegenerateAggregate,
    #[error("embedding dimensions differ: {0} vs {1}")]
    DimMismatch(usize, usize),
    #[error("enrollment wave too short: {frames} frames, need at least {needed}")]
    TooShort { frames: usize, needed: usize },
    #[error("enrollment wave carries no usable spectral shape")]
    DegenerateWave,
    #[error("embedding file: {0}")]
    BadFile(String),
    #[error(transparent)]
    Dsp(#[from] coher_dsp::DspError),
    #[error(transparent)]
    Feat(#[from] coher_features::FeatError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, EmbedError>;

/// Unit-norm speaker vector with an opaque identity label.
#[derive(Debug, Clone, PartialEq)]
pub struct SpeakerEmbedding {
    vector: Vec<f64>,
    speaker_id: String,
}

impl SpeakerEmbedding {
    /// Wraps a vector that is already unit-norm within [`NORM_EXACT`].
    pub fn new(vector: Vec<f64>, speaker_id: impl Into<String>) -> Result<Self> {
        if vector.is_empty() || vector.iter().any(|v| !v.is_finite()) {
            return Err(EmbedError::BadVector);
        }
        let norm = l2_norm(&vector);
        if (norm - 1.0).abs() > NORM_EXACT {
            return Err(EmbedError::NormOutOfTolerance(norm));
        }
        Ok(SpeakerEmbedding { vector, speaker_id: speaker_id.into() })
    }

    pub fn dim(&self) -> usize {
        self.vector.len()
    }

    pub fn vector(&self) -> &[f64] {
        &self.vector
    }

    pub fn speaker_id(&self) -> &str {
        &self.speaker_id
    }

    pub fn with_speaker_id(mut self, speaker_id: impl Into<String>) -> Self {
        self.speaker_id = speaker_id.into();
        self
    }
}

fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Normalizes in f64 and rounds to f32 precision, preserving vectors that
/// are already unit-norm within [`NORM_EXACT`] bit for bit.
fn finish_vector(mut v: Vec<f64>) -> Result<Vec<f64>> {
    let norm = l2_norm(&v);
    if norm < 1e-12 {
        return Err(EmbedError::DegenerateAggregate);
    }
    if (norm - 1.0).abs() > NORM_EXACT {
        for x in &mut v {
            *x /= norm;
        }
        for x in &mut v {
            *x = *x as f32 as f64;
        }
    }
    Ok(v)
}

/// Cosine similarity between two embeddings of equal dimension.
pub fn cosine_similarity(a: &SpeakerEmbedding, b: &SpeakerEmbedding) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(EmbedError::DimMismatch(a.dim(), b.dim()));
    }
    Ok(a.vector.iter().zip(b.vector.iter()).map(|(x, y)| x * y).sum())
}

/// Reads an embedding file, re-normalizing when the stored norm deviates
/// from 1 by more than [`NORM_EXACT`] but at most [`NORM_TOLERANCE`].
pub fn load_embedding(path: &Path) -> Result<SpeakerEmbedding> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(EmbedError::BadFile(format!("bad magic {:?}", magic)));
    }
    let version = r.read_u32::<LittleEndian>()?;
    if version != VERSION {
        return Err(EmbedError::BadFile(format!("unsupported version {version}")));
    }
    let dim = r.read_u32::<LittleEndian>()? as usize;
    if dim == 0 {
        return Err(EmbedError::BadVector);
    }
    let mut vector = Vec::with_capacity(dim);
    for _ in 0..dim {
        let v = r
            .read_f32::<LittleEndian>()
            .map_err(|_| EmbedError::BadFile("payload shorter than declared dimension".into()))?;
        if !v.is_finite() {
            return Err(EmbedError::BadVector);
        }
        vector.push(v as f64);
    }
    let id_len = r.read_u32::<LittleEndian>()? as usize;
    let mut id_bytes = vec![0u8; id_len];
    r.read_exact(&mut id_bytes)
        .map_err(|_| EmbedError::BadFile("truncated speaker id".into()))?;
    let speaker_id = String::from_utf8(id_bytes)
        .map_err(|_| EmbedError::BadFile("speaker id is not UTF-8".into()))?;
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing)? != 0 {
        return Err(EmbedError::BadFile("trailing bytes after payload".into()));
    }

    let norm = l2_norm(&vector);
    if norm < 1e-12 {
        return Err(EmbedError::BadVector);
    }
    if (norm - 1.0).abs() > NORM_TOLERANCE {
        return Err(EmbedError::NormOutOfTolerance(norm));
    }
    let vector = finish_vector(vector)?;
    SpeakerEmbedding::new(vector, speaker_id)
}

/// Writes an embedding to `path` in the binary d-vector format.
pub fn save_embedding(path: &Path, emb: &SpeakerEmbedding) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_u32::<LittleEndian>(VERSION)?;
    w.write_u32::<LittleEndian>(emb.dim() as u32)?;
    for &v in emb.vector() {
        w.write_f32::<LittleEndian>(v as f32)?;
    }
    let id = emb.speaker_id().as_bytes();
    w.write_u32::<LittleEndian>(id.len() as u32)?;
    w.write_all(id)?;
    w.flush()?;
    Ok(())
}

/// Elementwise mean of per-window embeddings, re-normalized to unit length.
/// The speaker id of the first window is kept.
pub fn aggregate_embeddings(windows: &[SpeakerEmbedding]) -> Result<SpeakerEmbedding> {
    let Some(first) = windows.first() else {
        return Err(EmbedError::BadVector);
    };
    let dim = first.dim();
    let mut mean = vec![0.0f64; dim];
    for w in windows {
        if w.dim() != dim {
            return Err(EmbedError::DimMismatch(dim, w.dim()));
        }
        for (acc, &v) in mean.iter_mut().zip(w.vector().iter()) {
            *acc += v;
        }
    }
    for v in &mut mean {
        *v /= windows.len() as f64;
    }
    let mean = finish_vector(mean)?;
    SpeakerEmbedding::new(mean, first.speaker_id().to_string())
}

/// Deterministic stand-in embedding from an enrollment waveform.
///
/// Summarizes the utterance by its mean log band energy (centered across
/// bands, so overall gain cancels) and mean absolute log-energy delta per
/// band, then projects the summary into `dim` dimensions with a fixed
/// seeded Gaussian matrix and normalizes. A pure function of the samples:
/// the same wave always produces the same vector, bit for bit.
pub fn stub_embedding(wave: &WaveBuffer, dim: usize) -> Result<SpeakerEmbedding> {
    const FRAME_LEN: usize = 400;
    const HOP: usize = 160;
    const NFFT: usize = 512;
    const BANDS: usize = 32;
    const MIN_FRAMES: usize = 10;

    if dim == 0 {
        return Err(EmbedError::BadVector);
    }
    let mono = wave.extract_channel(0)?;
    let frames_available = if mono.num_samples() >= FRAME_LEN {
        (mono.num_samples() - FRAME_LEN) / HOP + 1
    } else {
        0
    };
    if frames_available < MIN_FRAMES {
        return Err(EmbedError::TooShort { frames: frames_available, needed: MIN_FRAMES });
    }

    let spec = stft(&mono, FRAME_LEN, HOP, NFFT, WindowKind::Hann)?;
    let fb = build_erb_filterbank(NFFT, mono.sample_rate(), BANDS)?;
    let frames = spec.num_frames();

    let mut log_bands = vec![0.0f64; frames * BANDS];
    let mut power = vec![0.0f64; spec.num_bins()];
    for l in 0..frames {
        for (f, slot) in power.iter_mut().enumerate() {
            *slot = spec.at(0, l, f).norm_sqr();
        }
        for (b, &p) in fb.pool_power(&power).iter().enumerate() {
            log_bands[l * BANDS + b] = (p + LOG_FLOOR).log10();
        }
    }

    // Long-term spectral shape: per-band mean, centered across bands.
    let mut mu = vec![0.0f64; BANDS];
    for l in 0..frames {
        for b in 0..BANDS {
            mu[b] += log_bands[l * BANDS + b];
        }
    }
    for v in &mut mu {
        *v /= frames as f64;
    }
    let grand = mu.iter().sum::<f64>() / BANDS as f64;
    for v in &mut mu {
        *v -= grand;
    }

    // Modulation statistics: mean absolute frame-to-frame log delta.
    let mut delta = vec![0.0f64; BANDS];
    for l in 1..frames {
        for b in 0..BANDS {
            delta[b] += (log_bands[l * BANDS + b] - log_bands[(l - 1) * BANDS + b]).abs();
        }
    }
    for v in &mut delta {
        *v /= (frames - 1) as f64;
    }

    let summary: Vec<f64> = mu.into_iter().chain(delta).collect();

    // Fixed Gaussian projection into the embedding space.
    let mut rng = ChaCha12Rng::seed_from_u64(PROJECTION_SEED);
    let normal = StandardNormal;
    let mut vector = vec![0.0f64; dim];
    for slot in vector.iter_mut() {
        let mut acc = 0.0;
        for &s in &summary {
            let w: f64 = normal.sample(&mut rng);
            acc += w * s;
        }
        *slot = acc;
    }

    let norm = l2_norm(&vector);
    if norm < 1e-12 {
        return Err(EmbedError::DegenerateWave);
    }
    let vector = finish_vector(vector)?;
    SpeakerEmbedding::new(vector, "stub")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit(dim: usize, hot: usize) -> SpeakerEmbedding {
        let mut v = vec![0.0; dim];
        v[hot] = 1.0;
        SpeakerEmbedding::new(v, format!("e{hot}")).unwrap()
    }

    #[test]
    fn constructor_enforces_unit_norm() {
        assert!(SpeakerEmbedding::new(vec![1.0, 0.0], "a").is_ok());
        assert!(matches!(
            SpeakerEmbedding::new(vec![2.0, 0.0], "a"),
            Err(EmbedError::NormOutOfTolerance(_))
        ));
        assert!(matches!(SpeakerEmbedding::new(vec![], "a"), Err(EmbedError::BadVector)));
        assert!(matches!(
            SpeakerEmbedding::new(vec![f64::NAN], "a"),
            Err(EmbedError::BadVector)
        ));
    }

    #[test]
    fn aggregate_identical_is_identity() {
        let v = unit(8, 3);
        let out = aggregate_embeddings(&[v.clone(), v.clone(), v.clone()]).unwrap();
        assert_eq!(out.vector(), v.vector());
    }

    #[test]
    fn aggregate_two_axes() {
        let out = aggregate_embeddings(&[unit(4, 0), unit(4, 1)]).unwrap();
        let s = 1.0 / 2.0f64.sqrt();
        assert!((out.vector()[0] - s).abs() < 1e-6);
        assert!((out.vector()[1] - s).abs() < 1e-6);
        assert!(out.vector()[2].abs() < 1e-12);
        assert_eq!(out.speaker_id(), "e0");
    }

    #[test]
    fn aggregate_rejects_degenerate_and_mismatched() {
        let plus = unit(4, 0);
        let mut neg = vec![0.0; 4];
        neg[0] = -1.0;
        let minus = SpeakerEmbedding::new(neg, "neg").unwrap();
        assert!(matches!(
            aggregate_embeddings(&[plus.clone(), minus]),
            Err(EmbedError::DegenerateAggregate)
        ));
        assert!(matches!(aggregate_embeddings(&[]), Err(EmbedError::BadVector)));
        assert!(matches!(
            aggregate_embeddings(&[plus, unit(5, 0)]),
            Err(EmbedError::DimMismatch(4, 5))
        ));
    }

    #[test]
    fn save_load_round_trip_is_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("spk.dvec");
        let mut v = vec![0.0f64; 128];
        // f32-exact values: the on-disk payload is single precision.
        v[0] = 0.6f32 as f64;
        v[1] = 0.8f32 as f64;
        let emb = SpeakerEmbedding::new(v, "alice").unwrap();
        save_embedding(&path, &emb).unwrap();
        let back = load_embedding(&path).unwrap();
        assert_eq!(back, emb);

        let path2 = dir.path().join("spk2.dvec");
        save_embedding(&path2, &back).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&path2).unwrap());
    }

    #[test]
    fn load_applies_norm_rules() {
        let dir = tempfile::tempdir().unwrap();

        // Mild deviation: accepted and re-normalized.
        let path = dir.path().join("mild.dvec");
        write_raw(&path, &[1.005, 0.0, 0.0], "m");
        let emb = load_embedding(&path).unwrap();
        assert!((l2_norm(emb.vector()) - 1.0).abs() < 1e-6);

        // Large deviation: rejected.
        let path = dir.path().join("big.dvec");
        write_raw(&path, &[2.0, 0.0, 0.0], "b");
        let err = load_embedding(&path).unwrap_err();
        assert!(err.to_string().contains("norm out of tolerance"), "got: {err}");

        // Zero vector: rejected.
        let path = dir.path().join("zero.dvec");
        write_raw(&path, &[0.0, 0.0, 0.0], "z");
        assert!(load_embedding(&path).is_err());
    }

    #[test]
    fn load_rejects_malformed_files() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("junk.dvec");
        std::fs::write(&path, b"XXXX").unwrap();
        assert!(load_embedding(&path).is_err());

        let path = dir.path().join("short.dvec");
        write_raw(&path, &[1.0, 0.0], "ok");
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 1]).unwrap();
        assert!(load_embedding(&path).is_err());
    }

    fn write_raw(path: &Path, values: &[f64], id: &str) {
        let mut w = BufWriter::new(File::create(path).unwrap());
        w.write_all(b"DVEC").unwrap();
        w.write_u32::<LittleEndian>(1).unwrap();
        w.write_u32::<LittleEndian>(values.len() as u32).unwrap();
        for &v in values {
            w.write_f32::<LittleEndian>(v as f32).unwrap();
        }
        w.write_u32::<LittleEndian>(id.len() as u32).unwrap();
        w.write_all(id.as_bytes()).unwrap();
    }
}
