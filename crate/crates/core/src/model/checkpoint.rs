//! Binary checkpoint format:
//!
//! ```text
//! magic "CRNNCKPT" | version u8 | header_len u32 LE | header (TOML, UTF-8)
//! | f64 LE payload: parameters, optimizer velocity, norm mean, norm std
//! | SHA-256 of everything before it (32 bytes)
//! ```
//!
//! The header echoes the model and frontend configs and carries a layer
//! manifest that is checked against the rebuilt model on load.

use std::path::Path;

use ndarray::Array1;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{CrnnConfig, CrnnModel};
use crate::error::{Error, Result};
use crate::frontend::{NormStats, StftConfig};
use crate::nn::Parameterized;
use crate::optim::NesterovState;

pub const CHECKPOINT_VERSION: u8 = 1;
const MAGIC: &[u8; 8] = b"CRNNCKPT";
const DIGEST_LEN: usize = 32;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: CrnnModel,
    pub optimizer: Option<NesterovState>,
    pub norm: NormStats,
    pub stft: StftConfig,
    pub epoch: usize,
    pub seed: u64,
}

#[derive(Debug, Serialize, Deserialize)]
struct LayerEntry {
    name: String,
    params: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    epoch: usize,
    seed: u64,
    step_count: Option<u64>,
    norm_bins: usize,
    layers: Vec<LayerEntry>,
    stft: StftConfig,
    model: CrnnConfig,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = Header {
            epoch: self.epoch,
            seed: self.seed,
            step_count: self.optimizer.as_ref().map(|o| o.step_count),
            norm_bins: self.norm.num_bins(),
            layers: self
                .model
                .count_params()
                .items
                .into_iter()
                .map(|(name, params)| LayerEntry { name, params })
                .collect(),
            stft: self.stft,
            model: self.model.config().clone(),
        };
        let header = toml::to_string(&header).map_err(|e| Error::Checkpoint(e.to_string()))?;
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.push(CHECKPOINT_VERSION);
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(header.as_bytes());
        let mut put = |xs: &[f64]| {
            for x in xs {
                out.extend_from_slice(&x.to_le_bytes());
            }
        };
        for s in self.model.param_slices() {
            put(s);
        }
        if let Some(o) = &self.optimizer {
            put(&o.velocity);
        }
        put(self.norm.mean.as_slice().expect("contiguous"));
        put(self.norm.std.as_slice().expect("contiguous"));
        let digest = Sha256::digest(&out);
        out.extend_from_slice(digest.as_slice());
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Checkpoint(m.to_string());
        if bytes.len() < MAGIC.len() + 1 + 4 + DIGEST_LEN || &bytes[..8] != MAGIC {
            return Err(bad("not a checkpoint file"));
        }
        if bytes[8] != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported checkpoint version {} (expected {CHECKPOINT_VERSION})",
                bytes[8]
            )));
        }
        let (body, digest) = bytes.split_at(bytes.len() - DIGEST_LEN);
        if Sha256::digest(body).as_slice() != digest {
            return Err(bad("checksum mismatch (truncated or corrupted)"));
        }
        let header_len = u32::from_le_bytes(body[9..13].try_into().expect("4 bytes")) as usize;
        let header_end = 13usize
            .checked_add(header_len)
            .filter(|&e| e <= body.len())
            .ok_or_else(|| bad("header overruns file"))?;
        let header = std::str::from_utf8(&body[13..header_end]).map_err(|_| bad("header is not UTF-8"))?;
        let header: Header = toml::from_str(header).map_err(|e| Error::Checkpoint(format!("bad header: {e}")))?;

        let mut model = CrnnModel::build(&header.model, 0)?;
        let manifest: Vec<(String, usize)> = header.layers.iter().map(|l| (l.name.clone(), l.params)).collect();
        if manifest != model.count_params().items {
            return Err(bad("layer manifest does not match the configured model"));
        }
        let n = model.num_params();
        let velocity_len = if header.step_count.is_some() { n } else { 0 };
        let payload = &body[header_end..];
        let expected = (n + velocity_len + 2 * header.norm_bins) * 8;
        if payload.len() != expected {
            return Err(Error::Checkpoint(format!(
                "payload is {} bytes, expected {expected}",
                payload.len()
            )));
        }
        let mut values = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")));
        let mut take = |k: usize| -> Vec<f64> { values.by_ref().take(k).collect() };
        model.set_flat_params(&take(n));
        let optimizer = header.step_count.map(|step_count| NesterovState {
            velocity: take(n),
            step_count,
        });
        let mean = Array1::from_vec(take(header.norm_bins));
        let std = Array1::from_vec(take(header.norm_bins));
        Ok(Self {
            model,
            optimizer,
            norm: NormStats { mean, std },
            stft: header.stft,
            epoch: header.epoch,
            seed: header.seed,
        })
    }
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, ckpt.to_bytes()?).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::from_bytes(&bytes)
}
