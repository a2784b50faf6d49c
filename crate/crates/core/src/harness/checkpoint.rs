//! Binary checkpoint container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "NFERCKPT"            8 bytes
//! version               u32
//! header length         u64
//! header                JSON (config, hypergraph, tensor table, optimizer step, RNG state)
//! payload               f64 values: parameters, then first moments, then second moments
//! digest                SHA-256 of every preceding byte
//! ```

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::TrainConfig;
use super::optim::AdamWState;
use crate::error::{Error, Result};
use crate::hypergraph::Hypergraph;
use crate::model::{NferFormer, NferFormerParams};
use crate::numerics::Mat;

pub const MAGIC: &[u8; 8] = b"NFERCKPT";
pub const VERSION: u32 = 1;
const DIGEST_LEN: usize = 32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: [usize; 2],
}

/// Seed and progress; together they determine every later random draw.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: u64,
    pub epochs_completed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    config: TrainConfig,
    hypergraph: String,
    tensors: Vec<TensorEntry>,
    optimizer_step: u64,
    rng: RngState,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub model: NferFormer,
    pub optimizer: AdamWState,
    pub rng: RngState,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let tensors = self.model.params.tensors();
        let header = Header {
            config: self.config.clone(),
            hypergraph: self.model.hypergraph.to_document(),
            tensors: tensors.iter().map(|t| TensorEntry { name: t.name.clone(), shape: [t.value.rows(), t.value.cols()] }).collect(),
            optimizer_step: self.optimizer.step,
            rng: self.rng,
        };
        let header = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        let values = tensors.iter().map(|t| t.value).chain(&self.optimizer.first).chain(&self.optimizer.second);
        for m in values {
            for v in m.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |msg: &str| Error::Checkpoint(msg.to_string());
        if bytes.len() < MAGIC.len() + 12 + DIGEST_LEN || &bytes[..8] != MAGIC {
            return Err(bad("not a checkpoint (bad magic)"));
        }
        let (body, digest) = bytes.split_at(bytes.len() - DIGEST_LEN);
        if Sha256::digest(body).as_slice() != digest {
            return Err(bad("digest mismatch, file is corrupt"));
        }
        let version = u32::from_le_bytes(body[8..12].try_into().expect("4 bytes"));
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let header_len = u64::from_le_bytes(body[12..20].try_into().expect("8 bytes")) as usize;
        let header_end = 20usize.checked_add(header_len).filter(|&e| e <= body.len()).ok_or_else(|| bad("truncated header"))?;
        let header: Header = serde_json::from_slice(&body[20..header_end])?;
        let payload = &body[header_end..];
        if payload.len() % 8 != 0 {
            return Err(bad("payload is not a whole number of f64 values"));
        }
        let mut values = payload.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")));

        let hypergraph = Hypergraph::parse(&header.hypergraph)?;
        let model_cfg = header.config.model.clone();
        // shapes come from the config; values are overwritten below
        let mut params = NferFormerParams::init(&model_cfg, hypergraph.num_vertices(), &mut ChaCha8Rng::seed_from_u64(0))?;
        let layout: Vec<TensorEntry> = params
            .tensors()
            .iter()
            .map(|t| TensorEntry { name: t.name.clone(), shape: [t.value.rows(), t.value.cols()] })
            .collect();
        if layout != header.tensors {
            return Err(bad("tensor table does not match the stored model config"));
        }
        let mut take = |m: &mut Mat| -> Result<()> {
            for x in m.data_mut() {
                *x = values.next().ok_or_else(|| bad("truncated payload"))?;
            }
            Ok(())
        };
        for t in params.tensors_mut() {
            take(t.value)?;
        }
        let mut optimizer = AdamWState::new(&params);
        optimizer.step = header.optimizer_step;
        for m in optimizer.first.iter_mut().chain(optimizer.second.iter_mut()) {
            take(m)?;
        }
        if values.next().is_some() {
            return Err(bad("trailing payload"));
        }
        let model = NferFormer::new(model_cfg, hypergraph, params)?;
        Ok(Self { config: header.config, model, optimizer, rng: header.rng })
    }

    pub fn save(&self, path: &Path) -> Result<String> {
        let bytes = self.to_bytes();
        std::fs::write(path, &bytes)?;
        Ok(hex::encode(&bytes[bytes.len() - DIGEST_LEN..]))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    /// Hex SHA-256 stored in the trailer.
    pub fn digest(&self) -> String {
        let bytes = self.to_bytes();
        hex::encode(&bytes[bytes.len() - DIGEST_LEN..])
    }
}
