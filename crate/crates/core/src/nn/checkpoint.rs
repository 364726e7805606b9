//! Binary checkpoint container.
//!
//! ```text
//! magic      8 bytes  "SSELCKPT"
//! version    u32 LE
//! header     u32 LE length + UTF-8 JSON {model, meta, train_state}
//! blobs      u32 LE count, then per blob:
//!              u32 name length, name bytes,
//!              u32 rank, rank × u64 dims,
//!              product(dims) × f64 LE
//! digest     32 bytes SHA-256 of everything above
//! ```
//!
//! Model weights are stored one blob per parameter tensor under its layout
//! name; optimizer moments, when present, as `optim.m` and `optim.v`.

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::adam::AdamState;
use super::config::ModelConfig;
use super::net::Model;
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"SSELCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;
const DIGEST_LEN: usize = 32;

/// Optimizer and loop position needed to resume training.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    pub epoch: usize,
    pub global_step: u64,
    pub best_dev_sdri_db: Option<f64>,
    pub wall_time_s: f64,
    pub train_config: serde_json::Value,
}

#[derive(Serialize, Deserialize)]
struct Header {
    model: ModelConfig,
    #[serde(default)]
    meta: serde_json::Value,
    #[serde(default)]
    train_state: Option<TrainState>,
}

/// Everything a checkpoint file holds.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub model: Model,
    pub meta: serde_json::Value,
    pub train_state: Option<TrainState>,
    pub optimizer: Option<AdamState>,
}

impl Checkpoint {
    pub fn new(model: Model) -> Self {
        Self {
            model,
            meta: serde_json::Value::Null,
            train_state: None,
            optimizer: None,
        }
    }

    /// Short content hash of the weights, used to tag reports.
    pub fn weights_id(&self) -> String {
        let mut h = Sha256::new();
        for v in self.model.params() {
            h.update(v.to_le_bytes());
        }
        hex16(&h.finalize())
    }
}

fn hex16(bytes: &[u8]) -> String {
    bytes[..8].iter().map(|b| format!("{b:02x}")).collect()
}

fn corrupt(path: &Path, detail: impl Into<String>) -> Error {
    Error::Checkpoint {
        path: path.to_path_buf(),
        detail: detail.into(),
    }
}

fn push_blob(buf: &mut Vec<u8>, name: &str, shape: &[usize], data: &[f64]) {
    buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
    buf.extend_from_slice(name.as_bytes());
    buf.extend_from_slice(&(shape.len() as u32).to_le_bytes());
    for &d in shape {
        buf.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for v in data {
        buf.extend_from_slice(&v.to_le_bytes());
    }
}

/// Serialises a checkpoint to bytes.
pub fn encode(ckpt: &Checkpoint) -> Result<Vec<u8>> {
    let header = Header {
        model: ckpt.model.config().clone(),
        meta: ckpt.meta.clone(),
        train_state: ckpt.train_state.clone(),
    };
    let header = serde_json::to_vec(&header)?;
    let mut buf = Vec::with_capacity(ckpt.model.num_params() * 8 * 3 + header.len() + 1024);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(header.len() as u32).to_le_bytes());
    buf.extend_from_slice(&header);
    let specs = ckpt.model.param_specs();
    let count = specs.len() + if ckpt.optimizer.is_some() { 2 } else { 0 };
    buf.extend_from_slice(&(count as u32).to_le_bytes());
    let params = ckpt.model.params();
    for s in specs {
        push_blob(&mut buf, &s.name, &s.shape, &params[s.offset..s.offset + s.len]);
    }
    if let Some(opt) = &ckpt.optimizer {
        push_blob(&mut buf, "optim.m", &[opt.m.len()], &opt.m);
        push_blob(&mut buf, "optim.v", &[opt.v.len()], &opt.v);
    }
    let digest = Sha256::digest(&buf);
    buf.extend_from_slice(&digest);
    Ok(buf)
}

/// Writes atomically: a sibling temporary file is renamed over `path`.
pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    let bytes = encode(ckpt)?;
    let tmp = tmp_path(path);
    let write = || -> std::io::Result<()> {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(&bytes)?;
        f.sync_all()?;
        std::fs::rename(&tmp, path)
    };
    write().map_err(|e| {
        let _ = std::fs::remove_file(&tmp);
        Error::io(format!("writing checkpoint {}", path.display()), e)
    })
}

fn tmp_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".tmp");
    path.with_file_name(name)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(corrupt(self.path, "truncated"));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

/// Parses checkpoint bytes; `path` only labels errors.
pub fn decode(bytes: &[u8], path: &Path) -> Result<Checkpoint> {
    if bytes.len() < MAGIC.len() + 4 + DIGEST_LEN {
        return Err(corrupt(path, "truncated"));
    }
    if &bytes[..MAGIC.len()] != MAGIC {
        return Err(corrupt(path, "not a checkpoint file (bad magic)"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != CHECKPOINT_VERSION {
        return Err(corrupt(
            path,
            format!("format version {version}, this build reads version {CHECKPOINT_VERSION}"),
        ));
    }
    let (body, digest) = bytes.split_at(bytes.len() - DIGEST_LEN);
    if Sha256::digest(body).as_slice() != digest {
        return Err(corrupt(path, "checksum mismatch (truncated or corrupt)"));
    }
    let mut r = Reader {
        bytes: body,
        pos: 12,
        path,
    };
    let header_len = r.u32()? as usize;
    let header: Header = serde_json::from_slice(r.take(header_len)?)
        .map_err(|e| corrupt(path, format!("bad header: {e}")))?;
    header
        .model
        .validate()
        .map_err(|e| corrupt(path, format!("bad model config: {e}")))?;
    let probe = Model::new(header.model.clone(), 0)?;
    let mut params = vec![f64::NAN; probe.num_params()];
    let mut filled = vec![false; probe.param_specs().len()];
    let mut m = None;
    let mut v = None;
    let count = r.u32()?;
    for _ in 0..count {
        let name_len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|_| corrupt(path, "blob name is not UTF-8"))?
            .to_string();
        let rank = r.u32()? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u64()? as usize);
        }
        let len: usize = shape.iter().product();
        let raw = r.take(len.checked_mul(8).ok_or_else(|| corrupt(path, "blob too large"))?)?;
        let data: Vec<f64> = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        match name.as_str() {
            "optim.m" => m = Some(data),
            "optim.v" => v = Some(data),
            _ => {
                let idx = probe
                    .param_specs()
                    .iter()
                    .position(|s| s.name == name)
                    .ok_or_else(|| corrupt(path, format!("unexpected tensor {name}")))?;
                let spec = &probe.param_specs()[idx];
                if spec.shape != shape {
                    return Err(corrupt(
                        path,
                        format!("tensor {name} has shape {shape:?}, expected {:?}", spec.shape),
                    ));
                }
                params[spec.offset..spec.offset + spec.len].copy_from_slice(&data);
                filled[idx] = true;
            }
        }
    }
    if r.pos != body.len() {
        return Err(corrupt(path, "trailing bytes after the last tensor"));
    }
    if let Some(i) = filled.iter().position(|f| !f) {
        return Err(corrupt(
            path,
            format!("missing tensor {}", probe.param_specs()[i].name),
        ));
    }
    let optimizer = match (m, v) {
        (Some(m), Some(v)) if m.len() == params.len() && v.len() == params.len() => {
            let step = header.train_state.as_ref().map(|s| s.global_step).unwrap_or(0);
            Some(AdamState { m, v, step })
        }
        (None, None) => None,
        _ => return Err(corrupt(path, "incomplete optimizer state")),
    };
    let model = Model::from_params(header.model, params).map_err(|e| corrupt(path, e.to_string()))?;
    Ok(Checkpoint {
        model,
        meta: header.meta,
        train_state: header.train_state,
        optimizer,
    })
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(format!("reading checkpoint {}", path.display()), e))?;
    decode(&bytes, path)
}

/// Loads and checks that the stored model matches `expected`.
pub fn load_checkpoint_expecting(path: &Path, expected: &ModelConfig) -> Result<Checkpoint> {
    let ckpt = load_checkpoint(path)?;
    let diffs = ckpt.model.config().differences(expected);
    if !diffs.is_empty() {
        return Err(corrupt(
            path,
            format!("model configuration mismatch (stored vs expected): {}", diffs.join(", ")),
        ));
    }
    Ok(ckpt)
}
