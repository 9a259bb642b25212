//! Model checkpoints: a JSON manifest (configuration, schedule parameters,
//! stage tag) followed by one tensor-container entry per parameter, keyed
//! by parameter path.
//!
//! Layout:
//! ```text
//! magic        8 bytes  "HZBCKPT\0"
//! version      u16 le   1
//! manifest_len u32 le
//! manifest     JSON bytes
//! entry_count  u32 le
//! entries      entry_count x { name_len u16 le, name utf-8,
//!                              data_len u64 le, tensor container bytes }
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::container;
use crate::model::ModelConfig;
use crate::optim::ParamStore;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"HZBCKPT\0";
pub const VERSION: u16 = 1;
const MAX_ENTRIES: u32 = 1 << 20;
const MAX_NAME: u16 = 4096;

fn format_err(reason: impl Into<String>) -> Error {
    Error::Format {
        what: "checkpoint",
        reason: reason.into(),
    }
}

/// Everything needed to rebuild and validate the model besides the weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub format_version: u32,
    /// Which training stage produced the weights: `"stage1"` or `"stage2"`.
    pub stage: String,
    /// Diffusion step count the model was trained with.
    pub t_steps: usize,
    /// Variance scale factor.
    pub s: f64,
    pub model: ModelConfig,
}

pub fn encode_checkpoint(manifest: &CheckpointManifest, store: &ParamStore<f32>) -> Result<Vec<u8>> {
    let manifest_json = serde_json::to_vec(manifest)
        .map_err(|e| format_err(format!("manifest serialization: {e}")))?;
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(manifest_json.len() as u32).to_le_bytes());
    out.extend_from_slice(&manifest_json);
    out.extend_from_slice(&(store.len() as u32).to_le_bytes());
    for (name, tensor) in store.iter() {
        let blob = container::encode_tensor(tensor);
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(blob.len() as u64).to_le_bytes());
        out.extend_from_slice(&blob);
    }
    Ok(out)
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<(CheckpointManifest, Vec<(String, Tensor<f32>)>)> {
    let mut pos = 0usize;
    let take = |pos: &mut usize, n: usize| -> Result<&[u8]> {
        if bytes.len() - *pos < n {
            return Err(format_err("truncated input"));
        }
        let s = &bytes[*pos..*pos + n];
        *pos += n;
        Ok(s)
    };
    if take(&mut pos, 8)? != MAGIC {
        return Err(format_err("bad magic"));
    }
    let version = u16::from_le_bytes(take(&mut pos, 2)?.try_into().unwrap());
    if version != VERSION {
        return Err(format_err(format!("unsupported version {version}")));
    }
    let mlen = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize;
    if mlen > bytes.len() {
        return Err(format_err("manifest length exceeds file size"));
    }
    let manifest: CheckpointManifest = serde_json::from_slice(take(&mut pos, mlen)?)
        .map_err(|e| format_err(format!("manifest: {e}")))?;
    let count = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap());
    if count > MAX_ENTRIES {
        return Err(format_err(format!("entry count {count} too large")));
    }
    let mut entries = Vec::new();
    for _ in 0..count {
        let nlen = u16::from_le_bytes(take(&mut pos, 2)?.try_into().unwrap());
        if nlen == 0 || nlen > MAX_NAME {
            return Err(format_err(format!("name length {nlen} out of range")));
        }
        let name = std::str::from_utf8(take(&mut pos, nlen as usize)?)
            .map_err(|_| format_err("parameter name is not utf-8"))?
            .to_string();
        let dlen = u64::from_le_bytes(take(&mut pos, 8)?.try_into().unwrap());
        let dlen: usize = dlen
            .try_into()
            .map_err(|_| format_err("entry length exceeds platform size"))?;
        if bytes.len() - pos < dlen {
            return Err(format_err("entry length exceeds file size"));
        }
        let tensor = container::decode_tensor::<f32>(take(&mut pos, dlen)?)?;
        entries.push((name, tensor));
    }
    if pos != bytes.len() {
        return Err(format_err("trailing bytes after entries"));
    }
    Ok((manifest, entries))
}

pub fn save_checkpoint(
    path: impl AsRef<Path>,
    manifest: &CheckpointManifest,
    store: &ParamStore<f32>,
) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_checkpoint(manifest, store)?).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(
    path: impl AsRef<Path>,
) -> Result<(CheckpointManifest, Vec<(String, Tensor<f32>)>)> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}

/// Rebuild a parameter store (frozen or trainable) from checkpoint entries.
pub fn store_from_entries(
    entries: Vec<(String, Tensor<f32>)>,
    trainable: bool,
) -> Result<ParamStore<f32>> {
    let mut store = if trainable {
        ParamStore::trainable()
    } else {
        ParamStore::frozen()
    };
    for (name, tensor) in entries {
        store.register(name, tensor)?;
    }
    Ok(store)
}
