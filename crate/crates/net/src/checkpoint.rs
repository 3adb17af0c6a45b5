//! Model checkpoint serialization.
//!
//! Layout: magic "APVD", version u32, u32-length-prefixed JSON header
//! (model config plus optional training metadata), tensor count u32, then
//! per tensor a u32-length-prefixed name, ndim u32, dims u32 each, and the
//! single-precision little-endian payload. Optimizer state rides along
//! under the reserved "adam." name prefix.
//!
//! Model tensors are f32-quantized at every update, so the f64 -> f32 -> f64
//! disk round trip is exact and save/load preserves forward output bitwise.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use serde::{Deserialize, Serialize};

use crate::model::{ModelConfig, PvadModel};
use crate::tensor::Tensor;
use crate::NetError;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"APVD";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Reserved name prefix for optimizer moment tensors.
pub const OPTIMIZER_PREFIX: &str = "adam.";

/// Training bookkeeping carried in the checkpoint header.
#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq)]
pub struct CheckpointMeta {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epoch: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub best_val_loss: Option<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    #[serde(default)]
    meta: CheckpointMeta,
}

/// A loaded checkpoint: the model, its metadata, and any optimizer tensors
/// that were stored alongside it (prefix stripped off their names).
#[derive(Debug)]
pub struct Checkpoint {
    pub model: PvadModel,
    pub meta: CheckpointMeta,
    pub optimizer: Vec<(String, Tensor)>,
}

fn write_tensor<W: Write>(w: &mut W, name: &str, tensor: &Tensor) -> Result<(), NetError> {
    w.write_u32::<LittleEndian>(name.len() as u32)?;
    w.write_all(name.as_bytes())?;
    w.write_u32::<LittleEndian>(tensor.dims().len() as u32)?;
    for d in tensor.dims() {
        w.write_u32::<LittleEndian>(*d as u32)?;
    }
    for v in tensor.data() {
        w.write_f32::<LittleEndian>(*v as f32)?;
    }
    Ok(())
}

fn read_tensor<R: Read>(r: &mut R) -> Result<(String, Tensor), NetError> {
    let name_len = r.read_u32::<LittleEndian>()? as usize;
    if name_len > 4096 {
        return Err(NetError::BadCheckpoint(format!("implausible tensor name length {name_len}")));
    }
    let mut name_bytes = vec![0u8; name_len];
    r.read_exact(&mut name_bytes)?;
    let name = String::from_utf8(name_bytes)
        .map_err(|_| NetError::BadCheckpoint("tensor name is not UTF-8".into()))?;
    let ndim = r.read_u32::<LittleEndian>()? as usize;
    if ndim == 0 || ndim > 8 {
        return Err(NetError::BadCheckpoint(format!("tensor {name} has {ndim} dimensions")));
    }
    let mut dims = Vec::with_capacity(ndim);
    let mut volume = 1usize;
    for _ in 0..ndim {
        let d = r.read_u32::<LittleEndian>()? as usize;
        volume = volume.checked_mul(d).ok_or_else(|| {
            NetError::BadCheckpoint(format!("tensor {name} dimensions overflow"))
        })?;
        dims.push(d);
    }
    if volume > (1 << 28) {
        return Err(NetError::BadCheckpoint(format!("tensor {name} is implausibly large")));
    }
    let mut data = Vec::with_capacity(volume);
    for _ in 0..volume {
        data.push(r.read_f32::<LittleEndian>()? as f64);
    }
    Ok((name, Tensor::from_vec(dims, data)?))
}

/// Serializes the model, metadata, and optional optimizer tensors.
pub fn save_checkpoint<W: Write>(
    w: &mut W,
    model: &PvadModel,
    meta: &CheckpointMeta,
    optimizer: &[(String, Tensor)],
) -> Result<(), NetError> {
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_u32::<LittleEndian>(CHECKPOINT_VERSION)?;
    let header = Header { config: model.config().clone(), meta: meta.clone() };
    let json = serde_json::to_vec(&header)
        .map_err(|e| NetError::BadCheckpoint(format!("header serialization failed: {e}")))?;
    w.write_u32::<LittleEndian>(json.len() as u32)?;
    w.write_all(&json)?;

    let count = model.tensor_count() + optimizer.len();
    w.write_u32::<LittleEndian>(count as u32)?;
    for (i, name) in model.names().iter().enumerate() {
        write_tensor(w, name, model.tensor_at(i))?;
    }
    for (name, tensor) in optimizer {
        write_tensor(w, &format!("{OPTIMIZER_PREFIX}{name}"), tensor)?;
    }
    Ok(())
}

/// Parses a checkpoint and reconstructs the model. Every tensor named in the
/// config's inventory must appear exactly once with matching shape; unknown
/// names outside the optimizer prefix are rejected.
pub fn load_checkpoint<R: Read>(r: &mut R) -> Result<Checkpoint, NetError> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(NetError::BadCheckpoint("bad magic, not a model checkpoint".into()));
    }
    let version = r.read_u32::<LittleEndian>()?;
    if version != CHECKPOINT_VERSION {
        return Err(NetError::BadCheckpoint(format!("unsupported version {version}")));
    }
    let json_len = r.read_u32::<LittleEndian>()? as usize;
    if json_len > (1 << 20) {
        return Err(NetError::BadCheckpoint("implausible header length".into()));
    }
    let mut json = vec![0u8; json_len];
    r.read_exact(&mut json)?;
    let header: Header = serde_json::from_slice(&json)
        .map_err(|e| NetError::BadCheckpoint(format!("header parse failed: {e}")))?;

    let mut model = PvadModel::zeroed(header.config)?;
    let expected = model.tensor_count();
    let count = r.read_u32::<LittleEndian>()? as usize;
    let mut seen = vec![false; expected];
    let mut optimizer = Vec::new();
    for _ in 0..count {
        let (name, tensor) = read_tensor(r)?;
        if let Some(opt_name) = name.strip_prefix(OPTIMIZER_PREFIX) {
            optimizer.push((opt_name.to_string(), tensor));
            continue;
        }
        let idx = model.index_of(&name).ok_or_else(|| {
            NetError::BadCheckpoint(format!("tensor {name} is not in the model inventory"))
        })?;
        if seen[idx] {
            return Err(NetError::BadCheckpoint(format!("tensor {name} appears twice")));
        }
        if model.tensor_at(idx).dims() != tensor.dims() {
            return Err(NetError::BadCheckpoint(format!(
                "tensor {name} has shape {:?}, model expects {:?}",
                tensor.dims(),
                model.tensor_at(idx).dims()
            )));
        }
        *model.tensor_at_mut(idx) = tensor;
        seen[idx] = true;
    }
    if let Some(missing) = seen.iter().position(|s| !s) {
        return Err(NetError::BadCheckpoint(format!(
            "tensor {} missing from checkpoint",
            model.names()[missing]
        )));
    }
    Ok(Checkpoint { model, meta: header.meta, optimizer })
}

/// Saves to `path` atomically (temp file in the same directory, then rename).
pub fn save_checkpoint_file(
    path: &Path,
    model: &PvadModel,
    meta: &CheckpointMeta,
    optimizer: &[(String, Tensor)],
) -> Result<(), NetError> {
    let tmp = path.with_extension("tmp");
    {
        let mut f = std::io::BufWriter::new(fs::File::create(&tmp)?);
        save_checkpoint(&mut f, model, meta, optimizer)?;
        f.flush()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_checkpoint_file(path: &Path) -> Result<Checkpoint, NetError> {
    let mut f = std::io::BufReader::new(fs::File::open(path)?);
    load_checkpoint(&mut f)
}
