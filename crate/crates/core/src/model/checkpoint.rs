//! Self-describing binary checkpoint container.
//!
//! Layout: magic, format version (u32 LE), JSON header length (u64 LE), JSON
//! header, raw little-endian tensor payload, SHA-256 of everything before it.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::network::{Architecture, Classifier};
use super::optim::OptimizerState;
use crate::error::{Error, Result};
use crate::rng::RngStreams;
use crate::scalar::Scalar;

const MAGIC: &[u8; 8] = b"HAMCKPT\0";
pub const FORMAT_VERSION: u32 = 1;
const DIGEST_LEN: usize = 32;

/// Everything needed to resume training exactly.
#[derive(Debug, Clone)]
pub struct Checkpoint<T> {
    pub model: Classifier<T>,
    pub optimizer: OptimizerState<T>,
    /// Number of completed epochs.
    pub epoch: usize,
    pub rng: RngStreams,
    /// Free-form run metadata (config fingerprint, seed, ...).
    pub metadata: serde_json::Value,
}

#[derive(Serialize, Deserialize)]
struct Header {
    dtype: String,
    architecture: Architecture,
    epoch: usize,
    rng: RngStreams,
    learning_rate: f64,
    momentum: f64,
    weight_decay: f64,
    param_lens: Vec<usize>,
    buffer_lens: Vec<usize>,
    metadata: serde_json::Value,
}

fn corrupt(msg: impl Into<String>) -> Error {
    Error::CorruptCheckpoint(msg.into())
}

impl<T: Scalar> Checkpoint<T> {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = Header {
            dtype: T::DTYPE.to_string(),
            architecture: self.model.architecture().clone(),
            epoch: self.epoch,
            rng: self.rng.clone(),
            learning_rate: self.optimizer.learning_rate,
            momentum: self.optimizer.momentum,
            weight_decay: self.optimizer.weight_decay,
            param_lens: self.model.params().iter().map(|p| p.len()).collect(),
            buffer_lens: self.model.buffers().iter().map(|b| b.len()).collect(),
            metadata: self.metadata.clone(),
        };
        let header = serde_json::to_vec(&header).map_err(|e| corrupt(e.to_string()))?;
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        let tensors = self
            .model
            .params()
            .into_iter()
            .chain(self.model.buffers())
            .chain(self.optimizer.momentum_buffers.iter());
        for t in tensors {
            for &v in t {
                v.write_le(&mut out);
            }
        }
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < MAGIC.len() + 4 + 8 + DIGEST_LEN {
            return Err(corrupt(format!("file is only {} bytes", bytes.len())));
        }
        if &bytes[..8] != MAGIC {
            return Err(corrupt("bad magic"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != FORMAT_VERSION {
            return Err(Error::CheckpointVersion {
                found: version,
                expected: FORMAT_VERSION,
            });
        }
        let (body, digest) = bytes.split_at(bytes.len() - DIGEST_LEN);
        if Sha256::digest(body).as_slice() != digest {
            return Err(corrupt("checksum mismatch (truncated or modified file)"));
        }
        let header_len = u64::from_le_bytes(body[12..20].try_into().expect("8 bytes")) as usize;
        let header_end = 20usize
            .checked_add(header_len)
            .filter(|&e| e <= body.len())
            .ok_or_else(|| corrupt("header length exceeds file"))?;
        let header: Header = serde_json::from_slice(&body[20..header_end]).map_err(|e| corrupt(e.to_string()))?;
        if header.dtype != T::DTYPE {
            return Err(corrupt(format!("stored dtype {} but {} requested", header.dtype, T::DTYPE)));
        }
        let mut model = Classifier::<T>::zeros(header.architecture)?;
        let mut payload = &body[header_end..];
        let mut read = |len: usize| -> Result<Vec<T>> {
            let need = len * T::BYTES;
            if payload.len() < need {
                return Err(corrupt("payload shorter than header describes"));
            }
            let (head, rest) = payload.split_at(need);
            payload = rest;
            Ok(head.chunks_exact(T::BYTES).map(T::read_le).collect())
        };
        {
            let params = model.params_mut();
            if params.len() != header.param_lens.len() {
                return Err(corrupt("parameter group count does not match architecture"));
            }
            for (p, &len) in params.into_iter().zip(&header.param_lens) {
                if p.len() != len {
                    return Err(corrupt("parameter group length does not match architecture"));
                }
                *p = read(len)?;
            }
        }
        {
            let buffers = model.buffers_mut();
            if buffers.len() != header.buffer_lens.len() {
                return Err(corrupt("buffer count does not match architecture"));
            }
            for (b, &len) in buffers.into_iter().zip(&header.buffer_lens) {
                if b.len() != len {
                    return Err(corrupt("buffer length does not match architecture"));
                }
                *b = read(len)?;
            }
        }
        let momentum_buffers = header
            .param_lens
            .iter()
            .map(|&len| read(len))
            .collect::<Result<Vec<_>>>()?;
        if !payload.is_empty() {
            return Err(corrupt("trailing bytes after payload"));
        }
        Ok(Self {
            model,
            optimizer: OptimizerState {
                learning_rate: header.learning_rate,
                momentum: header.momentum,
                weight_decay: header.weight_decay,
                momentum_buffers,
            },
            epoch: header.epoch,
            rng: header.rng,
            metadata: header.metadata,
        })
    }
}

/// Writes atomically (temp file + rename).
pub fn save_checkpoint<T: Scalar>(checkpoint: &Checkpoint<T>, path: &Path) -> Result<()> {
    let bytes = checkpoint.to_bytes()?;
    let tmp = path.with_extension("tmp");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(&bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_checkpoint<T: Scalar>(path: &Path) -> Result<Checkpoint<T>> {
    Checkpoint::from_bytes(&fs::read(path)?)
}
