//! Single-file model checkpoints.
//!
//! Layout (little-endian throughout):
//!
//! ```text
//! [ 8 bytes ] magic "DDFFCKP1"
//! [ 4 bytes ] format version, u32
//! [ 8 bytes ] header length in bytes, u64
//! [ header ] JSON: network spec, tensor directory, free-form metadata
//! [ payload ] all tensor values as raw f32, concatenated in directory order
//! ```
//!
//! The tensor directory lists every named tensor with its shape and its
//! offset/length in f32 elements within the payload.  Running normalization
//! statistics are stored alongside trainable parameters, so a loaded model
//! reproduces inference bit-for-bit.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::NetError;
use crate::network::{build_network, DdffNet, NetworkSpec};

pub const MAGIC: &[u8; 8] = b"DDFFCKP1";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    /// Offset into the payload, in f32 elements.
    offset: u64,
    /// Element count; equals the product of `shape`.
    len: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Header {
    spec: NetworkSpec,
    tensors: Vec<TensorEntry>,
    #[serde(default)]
    metadata: Value,
}

/// Serializes the model and caller-supplied metadata to `path`.
pub fn save_checkpoint(path: &Path, net: &DdffNet, metadata: &Value) -> Result<(), NetError> {
    let tensors = net.named_tensors();
    let mut entries = Vec::with_capacity(tensors.len());
    let mut payload: Vec<u8> = Vec::new();
    let mut offset = 0u64;
    for (name, shape, data) in &tensors {
        entries.push(TensorEntry {
            name: name.clone(),
            shape: shape.clone(),
            offset,
            len: data.len() as u64,
        });
        offset += data.len() as u64;
        for v in data {
            payload.extend_from_slice(&v.to_le_bytes());
        }
    }
    let header = Header {
        spec: net.spec().clone(),
        tensors: entries,
        metadata: metadata.clone(),
    };
    let header_json =
        serde_json::to_vec(&header).map_err(|e| NetError::ckpt_format(path, e.to_string()))?;
    let mut bytes = Vec::with_capacity(20 + header_json.len() + payload.len());
    bytes.extend_from_slice(MAGIC);
    bytes.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    bytes.extend_from_slice(&(header_json.len() as u64).to_le_bytes());
    bytes.extend_from_slice(&header_json);
    bytes.extend_from_slice(&payload);
    fs::write(path, bytes).map_err(|e| NetError::ckpt_io(path, e))
}

/// Reads a checkpoint back into a model, returning it with the stored
/// metadata.
pub fn load_checkpoint(path: &Path) -> Result<(DdffNet, Value), NetError> {
    let bytes = fs::read(path).map_err(|e| NetError::ckpt_io(path, e))?;
    if bytes.len() < 20 {
        return Err(NetError::ckpt_format(path, "file shorter than the fixed prologue"));
    }
    if &bytes[0..8] != MAGIC {
        return Err(NetError::ckpt_format(path, "magic bytes do not match"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != FORMAT_VERSION {
        return Err(NetError::ckpt_format(
            path,
            format!("format version {version}, expected {FORMAT_VERSION}"),
        ));
    }
    let header_len = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
    let payload_start = 20usize.checked_add(header_len).ok_or_else(|| {
        NetError::ckpt_format(path, "header length overflows")
    })?;
    if bytes.len() < payload_start {
        return Err(NetError::ckpt_format(path, "header extends past end of file"));
    }
    let header: Header = serde_json::from_slice(&bytes[20..payload_start])
        .map_err(|e| NetError::ckpt_format(path, format!("header: {e}")))?;
    let payload = &bytes[payload_start..];
    if payload.len() % 4 != 0 {
        return Err(NetError::ckpt_format(path, "payload is not a whole number of f32"));
    }
    let payload_elems = (payload.len() / 4) as u64;

    let mut net = build_network(&header.spec, 0)?;
    let expected: Vec<String> = net.named_tensors().into_iter().map(|(n, _, _)| n).collect();
    if header.tensors.len() != expected.len() {
        return Err(NetError::ckpt_format(
            path,
            format!(
                "tensor directory has {} entries, model needs {}",
                header.tensors.len(),
                expected.len()
            ),
        ));
    }
    for entry in &header.tensors {
        let count: usize = entry.shape.iter().product();
        if count as u64 != entry.len {
            return Err(NetError::ckpt_format(
                path,
                format!("tensor {}: shape does not match element count", entry.name),
            ));
        }
        let end = entry.offset.checked_add(entry.len).ok_or_else(|| {
            NetError::ckpt_format(path, format!("tensor {}: offset overflows", entry.name))
        })?;
        if end > payload_elems {
            return Err(NetError::ckpt_format(
                path,
                format!("tensor {}: data extends past the payload", entry.name),
            ));
        }
        let start = entry.offset as usize * 4;
        let data: Vec<f32> = payload[start..start + entry.len as usize * 4]
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")))
            .collect();
        net.load_tensor(&entry.name, &data)
            .map_err(|e| NetError::ckpt_format(path, format!("tensor {}: {e}", entry.name)))?;
    }
    Ok((net, header.metadata))
}
