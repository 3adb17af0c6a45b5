//! Binary serialization of assembled input features.
//!
//! Layout: magic `AFEA`, version u32, then channels/frames/bands as u32,
//! then the tensor payload as little-endian f32 in (channel, frame, band)
//! order. All integers are little-endian.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use crate::{FeatError, InputFeature, Result, FEATURE_CHANNELS};

const MAGIC: &[u8; 4] = b"AFEA";
const VERSION: u32 = 1;

/// Writes an [`InputFeature`] to `path`.
pub fn save_afea(path: &Path, feat: &InputFeature) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_u32::<LittleEndian>(VERSION)?;
    w.write_u32::<LittleEndian>(FEATURE_CHANNELS as u32)?;
    w.write_u32::<LittleEndian>(feat.num_frames() as u32)?;
    w.write_u32::<LittleEndian>(feat.num_bands() as u32)?;
    for &v in feat.data() {
        w.write_f32::<LittleEndian>(v as f32)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads an [`InputFeature`] from `path`, validating magic, version,
/// dimensions, and finiteness.
pub fn load_afea(path: &Path) -> Result<InputFeature> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(FeatError::BadFile(format!("bad magic {:?}", magic)));
    }
    let version = r.read_u32::<LittleEndian>()?;
    if version != VERSION {
        return Err(FeatError::BadFile(format!("unsupported version {version}")));
    }
    let channels = r.read_u32::<LittleEndian>()? as usize;
    let frames = r.read_u32::<LittleEndian>()? as usize;
    let bands = r.read_u32::<LittleEndian>()? as usize;
    if channels != FEATURE_CHANNELS {
        return Err(FeatError::BadFile(format!(
            "expected {FEATURE_CHANNELS} channels, file has {channels}"
        )));
    }
    let count = channels * frames * bands;
    let mut data = Vec::with_capacity(count);
    for _ in 0..count {
        let v = r.read_f32::<LittleEndian>().map_err(|_| {
            FeatError::BadFile("payload shorter than the declared dimensions".into())
        })?;
        if !v.is_finite() {
            return Err(FeatError::BadFile("non-finite value in payload".into()));
        }
        data.push(v as f64);
    }
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing)? != 0 {
        return Err(FeatError::BadFile("trailing bytes after payload".into()));
    }
    InputFeature::from_raw(data, frames, bands)
}
