//! Frame-level activity labels and their on-disk format.
//!
//! A frame is active when its energy in the clean reverberant target
//! exceeds the clip's peak frame energy minus a threshold in dB. Labels use
//! the same framing grid as feature extraction, so they align one-to-one
//! with feature frames.
//!
//! File format: magic "ALBL", little-endian u32 count, then one byte per
//! frame (0 or 1).

use crate::{Result, SimError};
use coher_dsp::{frame_energy, WaveBuffer};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

pub const LABEL_MAGIC: [u8; 4] = *b"ALBL";

/// Frames quieter than the peak by more than this are labeled inactive.
pub const DEFAULT_LABEL_THRESHOLD_DB: f64 = 40.0;

/// Labels channel 0 of `clean_target` on the `(frame_len, hop)` grid.
///
/// An all-silent signal yields all-zero labels rather than an error.
pub fn label_frames(clean_target: &WaveBuffer, frame_len: usize, hop: usize, threshold_db: f64) -> Result<Vec<u8>> {
    if !(threshold_db > 0.0) || !threshold_db.is_finite() {
        return Err(SimError::BadParam(format!("bad label threshold {threshold_db} dB")));
    }
    let energies = frame_energy(clean_target, 0, frame_len, hop)?;
    let peak = energies.iter().fold(0.0, |a: f64, &b| a.max(b));
    let threshold = peak * 10f64.powf(-threshold_db / 10.0);
    Ok(energies.iter().map(|&e| u8::from(e > threshold)).collect())
}

pub fn save_labels<W: Write>(writer: &mut W, labels: &[u8]) -> Result<()> {
    if labels.iter().any(|&b| b > 1) {
        return Err(SimError::BadLabelFile("labels must be 0 or 1".into()));
    }
    let count = u32::try_from(labels.len())
        .map_err(|_| SimError::BadLabelFile("too many frames for the u32 header".into()))?;
    writer.write_all(&LABEL_MAGIC)?;
    writer.write_all(&count.to_le_bytes())?;
    writer.write_all(labels)?;
    Ok(())
}

pub fn load_labels<R: Read>(reader: &mut R) -> Result<Vec<u8>> {
    let mut magic = [0u8; 4];
    reader.read_exact(&mut magic)?;
    if magic != LABEL_MAGIC {
        return Err(SimError::BadLabelFile(format!("bad magic {magic:?}")));
    }
    let mut len_bytes = [0u8; 4];
    reader.read_exact(&mut len_bytes)?;
    let count = u32::from_le_bytes(len_bytes) as usize;
    let mut labels = vec![0u8; count];
    reader.read_exact(&mut labels)?;
    let mut trailing = [0u8; 1];
    if reader.read(&mut trailing)? != 0 {
        return Err(SimError::BadLabelFile("trailing bytes after labels".into()));
    }
    if labels.iter().any(|&b| b > 1) {
        return Err(SimError::BadLabelFile("labels must be 0 or 1".into()));
    }
    Ok(labels)
}

/// Writes atomically: a temp file in the same directory, then a rename.
pub fn save_labels_file(path: &Path, labels: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    {
        let mut writer = BufWriter::new(File::create(&tmp)?);
        save_labels(&mut writer, labels)?;
        writer.flush()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_labels_file(path: &Path) -> Result<Vec<u8>> {
    load_labels(&mut BufReader::new(File::open(path)?))
}
