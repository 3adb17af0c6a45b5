//! Minimal RIFF WAV reader/writer.
//!
//! Reads PCM 16-bit and IEEE float 32-bit files with 1 to 8 channels;
//! integer samples are scaled by 1/32768. Writes IEEE float 32-bit only.
//! Unknown RIFF chunks are skipped; unsupported encodings are rejected
//! with a descriptive error rather than decoded approximately.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Seek, SeekFrom, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use crate::{DspError, Result, WaveBuffer};

const FORMAT_PCM: u16 = 1;
const FORMAT_IEEE_FLOAT: u16 = 3;

pub const MAX_CHANNELS: usize = 8;

fn bad(msg: impl Into<String>) -> DspError {
    DspError::Wav(msg.into())
}

struct FmtChunk {
    format: u16,
    channels: u16,
    sample_rate: u32,
    bits_per_sample: u16,
}

/// Reads a WAV file into a [`WaveBuffer`], deinterleaving channels.
pub fn read_wav(path: &Path) -> Result<WaveBuffer> {
    let mut r = BufReader::new(File::open(path)?);

    let mut tag = [0u8; 4];
    r.read_exact(&mut tag)?;
    if &tag != b"RIFF" {
        return Err(bad("missing RIFF header"));
    }
    let _riff_size = r.read_u32::<LittleEndian>()?;
    r.read_exact(&mut tag)?;
    if &tag != b"WAVE" {
        return Err(bad("missing WAVE form type"));
    }

    let mut fmt: Option<FmtChunk> = None;
    let mut data: Option<Vec<u8>> = None;

    loop {
        if r.read_exact(&mut tag).is_err() {
            break;
        }
        let size = r.read_u32::<LittleEndian>()? as usize;
        match &tag {
            b"fmt " => {
                if size < 16 {
                    return Err(bad("fmt chunk too small"));
                }
                let format = r.read_u16::<LittleEndian>()?;
                let channels = r.read_u16::<LittleEndian>()?;
                let sample_rate = r.read_u32::<LittleEndian>()?;
                let _byte_rate = r.read_u32::<LittleEndian>()?;
                let _block_align = r.read_u16::<LittleEndian>()?;
                let bits_per_sample = r.read_u16::<LittleEndian>()?;
                if size > 16 {
                    r.seek(SeekFrom::Current((size - 16) as i64))?;
                }
                fmt = Some(FmtChunk { format, channels, sample_rate, bits_per_sample });
            }
            b"data" => {
                let mut bytes = vec![0u8; size];
                r.read_exact(&mut bytes)?;
                data = Some(bytes);
            }
            _ => {
                r.seek(SeekFrom::Current(size as i64))?;
            }
        }
        // Chunks are word-aligned; odd sizes carry a pad byte.
        if size % 2 == 1 {
            let _ = r.seek(SeekFrom::Current(1));
        }
        if fmt.is_some() && data.is_some() {
            break;
        }
    }

    let fmt = fmt.ok_or_else(|| bad("missing fmt chunk"))?;
    let data = data.ok_or_else(|| bad("missing data chunk"))?;

    let channels = fmt.channels as usize;
    if channels == 0 || channels > MAX_CHANNELS {
        return Err(bad(format!("unsupported channel count {} (expected 1..=8)", channels)));
    }

    let samples: Vec<f64> = match (fmt.format, fmt.bits_per_sample) {
        (FORMAT_PCM, 16) => data
            .chunks_exact(2)
            .map(|b| i16::from_le_bytes([b[0], b[1]]) as f64 / 32768.0)
            .collect(),
        (FORMAT_IEEE_FLOAT, 32) => data
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
            .collect(),
        (format, bits) => {
            return Err(bad(format!(
                "unsupported encoding: format tag {} with {} bits per sample \
                 (expected PCM 16-bit or IEEE float 32-bit)",
                format, bits
            )));
        }
    };

    if samples.len() % channels != 0 {
        return Err(bad("data chunk length is not a whole number of sample frames"));
    }
    if samples.iter().any(|x| !x.is_finite()) {
        return Err(DspError::NonFiniteSample);
    }

    let frames = samples.len() / channels;
    let mut deinterleaved = vec![Vec::with_capacity(frames); channels];
    for frame in samples.chunks_exact(channels) {
        for (ch, &x) in deinterleaved.iter_mut().zip(frame.iter()) {
            ch.push(x);
        }
    }

    WaveBuffer::new(deinterleaved, fmt.sample_rate)
}

/// Writes a [`WaveBuffer`] as an interleaved IEEE float 32-bit WAV file.
pub fn write_wav_f32(path: &Path, wave: &WaveBuffer) -> Result<()> {
    let channels = wave.num_channels();
    if channels > MAX_CHANNELS {
        return Err(bad(format!("unsupported channel count {} (expected 1..=8)", channels)));
    }
    let frames = wave.num_samples();
    let data_len = (frames * channels * 4) as u32;

    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(b"RIFF")?;
    // RIFF size: WAVE + fmt(8+16) + fact(8+4) + data(8+len).
    w.write_u32::<LittleEndian>(4 + 24 + 12 + 8 + data_len)?;
    w.write_all(b"WAVE")?;

    w.write_all(b"fmt ")?;
    w.write_u32::<LittleEndian>(16)?;
    w.write_u16::<LittleEndian>(FORMAT_IEEE_FLOAT)?;
    w.write_u16::<LittleEndian>(channels as u16)?;
    w.write_u32::<LittleEndian>(wave.sample_rate())?;
    w.write_u32::<LittleEndian>(wave.sample_rate() * channels as u32 * 4)?;
    w.write_u16::<LittleEndian>(channels as u16 * 4)?;
    w.write_u16::<LittleEndian>(32)?;

    // fact chunk is conventional for non-PCM encodings.
    w.write_all(b"fact")?;
    w.write_u32::<LittleEndian>(4)?;
    w.write_u32::<LittleEndian>(frames as u32)?;

    w.write_all(b"data")?;
    w.write_u32::<LittleEndian>(data_len)?;
    for i in 0..frames {
        for m in 0..channels {
            w.write_f32::<LittleEndian>(wave.channel(m)[i] as f32)?;
        }
    }
    w.flush()?;
    Ok(())
}
