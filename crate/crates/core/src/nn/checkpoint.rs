//! Single-file versioned checkpoints.
//!
//! Layout: `XCAMCKPT` magic, `u32` format version, `u64` header length, a JSON
//! header (model kind, config echo, parameter table), then every parameter as
//! little-endian `f64` in table order.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::params::{ParamEntry, ParamKind, ParamStore};
use crate::error::{Error, IoContext, Result};
use crate::fsutil::write_atomic;
use crate::tensor::Tensor;

const MAGIC: &[u8; 8] = b"XCAMCKPT";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    kind: String,
    config: serde_json::Value,
    params: Vec<ParamMeta>,
}

#[derive(Serialize, Deserialize)]
struct ParamMeta {
    name: String,
    kind: ParamKind,
    shape: Vec<usize>,
}

/// A decoded checkpoint.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub kind: String,
    pub config: serde_json::Value,
    pub params: ParamStore,
}

pub fn encode(kind: &str, config: &serde_json::Value, store: &ParamStore) -> Result<Vec<u8>> {
    let header = Header {
        kind: kind.to_string(),
        config: config.clone(),
        params: store
            .entries()
            .iter()
            .map(|e| ParamMeta {
                name: e.name.clone(),
                kind: e.kind,
                shape: e.value.shape().to_vec(),
            })
            .collect(),
    };
    let json = serde_json::to_vec(&header)?;
    let payload: usize = store.entries().iter().map(|e| e.value.numel() * 8).sum();
    let mut buf = Vec::with_capacity(20 + json.len() + payload);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(json.len() as u64).to_le_bytes());
    buf.extend_from_slice(&json);
    for e in store.entries() {
        for v in e.value.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(buf)
}

pub fn decode(bytes: &[u8]) -> Result<Checkpoint> {
    let bad = |m: &str| Error::Checkpoint(m.to_string());
    if bytes.len() < 20 || &bytes[..8] != MAGIC {
        return Err(bad("not a checkpoint file (bad magic)"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported checkpoint version {version} (expected {FORMAT_VERSION})"
        )));
    }
    let hlen = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
    let body = &bytes[20..];
    if body.len() < hlen {
        return Err(bad("truncated header"));
    }
    let header: Header = serde_json::from_slice(&body[..hlen])?;
    let mut payload = &body[hlen..];
    let mut entries = Vec::with_capacity(header.params.len());
    for meta in header.params {
        let n: usize = meta.shape.iter().product();
        if payload.len() < n * 8 {
            return Err(Error::Checkpoint(format!("truncated payload at {}", meta.name)));
        }
        let data = payload[..n * 8]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        payload = &payload[n * 8..];
        entries.push(ParamEntry {
            name: meta.name,
            kind: meta.kind,
            value: Tensor::new(meta.shape, data)?,
        });
    }
    if !payload.is_empty() {
        return Err(bad("trailing bytes after payload"));
    }
    Ok(Checkpoint {
        kind: header.kind,
        config: header.config,
        params: ParamStore::from_entries(entries),
    })
}

/// Write atomically (temp file + rename).
pub fn save(path: &Path, kind: &str, config: &serde_json::Value, store: &ParamStore) -> Result<()> {
    let bytes = encode(kind, config, store)?;
    write_atomic(path, &bytes)
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).io_ctx(|| format!("reading checkpoint {}", path.display()))?;
    decode(&bytes)
}
