//! Descriptor files: a binary matrix plus a JSON-lines metadata sidecar.
//!
//! Binary layout (little endian): `XCAMDESC` magic, `u32` version, `u32`
//! reserved, `u64` count, `u64` dim, then `count * dim` `f32` values. The
//! sidecar `<file>.jsonl` starts with a config line `{"config": ...}` followed
//! by one `{"vehicle_id", "camera_id", "path"}` line per row.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, IoContext, Result};
use crate::fsutil::write_atomic;

const MAGIC: &[u8; 8] = b"XCAMDESC";
pub const DESCRIPTOR_VERSION: u32 = 1;
const HEADER_LEN: usize = 32;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DescriptorMeta {
    pub vehicle_id: u32,
    pub camera_id: u32,
    pub path: PathBuf,
}

/// Row-major descriptors with per-row metadata, in manifest order.
#[derive(Clone, Debug, PartialEq)]
pub struct DescriptorStore {
    pub dim: usize,
    pub data: Vec<f32>,
    pub meta: Vec<DescriptorMeta>,
    /// Extraction config echo.
    pub config: serde_json::Value,
}

#[derive(Serialize, Deserialize)]
struct ConfigLine {
    config: serde_json::Value,
}

impl DescriptorStore {
    pub fn new(dim: usize, config: serde_json::Value) -> Self {
        DescriptorStore {
            dim,
            data: Vec::new(),
            meta: Vec::new(),
            config,
        }
    }

    pub fn len(&self) -> usize {
        self.meta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.meta.is_empty()
    }

    pub fn push(&mut self, row: &[f64], meta: DescriptorMeta) -> Result<()> {
        if row.len() != self.dim {
            return Err(Error::shape(format!("descriptor length {} != store dim {}", row.len(), self.dim)));
        }
        if let Some(bad) = row.iter().find(|v| !v.is_finite()) {
            return Err(Error::Domain {
                op: "descriptor",
                msg: format!("non-finite entry {bad} for {}", meta.path.display()),
            });
        }
        self.data.extend(row.iter().map(|&v| v as f32));
        self.meta.push(meta);
        Ok(())
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    /// Columns `[start, start + len)` of every row as a new store.
    pub fn columns(&self, start: usize, len: usize) -> Result<Self> {
        if start + len > self.dim {
            return Err(Error::shape(format!("columns {start}..{} beyond dim {}", start + len, self.dim)));
        }
        let mut data = Vec::with_capacity(self.len() * len);
        for i in 0..self.len() {
            data.extend_from_slice(&self.row(i)[start..start + len]);
        }
        Ok(DescriptorStore {
            dim: len,
            data,
            meta: self.meta.clone(),
            config: self.config.clone(),
        })
    }

    /// Rows at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> Self {
        let mut out = DescriptorStore::new(self.dim, self.config.clone());
        for &i in indices {
            out.data.extend_from_slice(self.row(i));
            out.meta.push(self.meta[i].clone());
        }
        out
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut buf = Vec::with_capacity(HEADER_LEN + self.data.len() * 4);
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&DESCRIPTOR_VERSION.to_le_bytes());
        buf.extend_from_slice(&0u32.to_le_bytes());
        buf.extend_from_slice(&(self.len() as u64).to_le_bytes());
        buf.extend_from_slice(&(self.dim as u64).to_le_bytes());
        for v in &self.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        buf
    }

    pub fn sidecar(&self) -> Result<String> {
        let mut out = serde_json::to_string(&ConfigLine {
            config: self.config.clone(),
        })?;
        out.push('\n');
        for m in &self.meta {
            out.push_str(&serde_json::to_string(m)?);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(&sidecar_path(path), self.sidecar()?.as_bytes())?;
        write_atomic(path, &self.encode())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).io_ctx(|| format!("reading descriptors {}", path.display()))?;
        let side = sidecar_path(path);
        let text = std::fs::read_to_string(&side).io_ctx(|| format!("reading {}", side.display()))?;
        Self::decode(&bytes, &text, &side)
    }

    pub fn decode(bytes: &[u8], sidecar: &str, sidecar_name: &Path) -> Result<Self> {
        let bad = |m: String| Error::Validation(format!("descriptor file: {m}"));
        if bytes.len() < HEADER_LEN || &bytes[..8] != MAGIC {
            return Err(bad("bad magic".into()));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != DESCRIPTOR_VERSION {
            return Err(bad(format!("unsupported version {version}")));
        }
        let count = u64::from_le_bytes(bytes[16..24].try_into().unwrap()) as usize;
        let dim = u64::from_le_bytes(bytes[24..32].try_into().unwrap()) as usize;
        let payload = &bytes[HEADER_LEN..];
        if payload.len() != count * dim * 4 {
            return Err(bad(format!("payload of {} bytes for {count}x{dim} rows", payload.len())));
        }
        let data = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let mut lines = sidecar.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let parse_err = |line: usize, e: serde_json::Error| Error::Parse {
            path: sidecar_name.to_path_buf(),
            line: line + 1,
            msg: e.to_string(),
        };
        let config = match lines.next() {
            Some((i, l)) => serde_json::from_str::<ConfigLine>(l).map_err(|e| parse_err(i, e))?.config,
            None => return Err(bad("empty sidecar".into())),
        };
        let meta = lines
            .map(|(i, l)| serde_json::from_str::<DescriptorMeta>(l).map_err(|e| parse_err(i, e)))
            .collect::<Result<Vec<_>>>()?;
        if meta.len() != count {
            return Err(bad(format!("{count} rows but {} metadata lines", meta.len())));
        }
        Ok(DescriptorStore { dim, data, meta, config })
    }
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".jsonl");
    PathBuf::from(s)
}
