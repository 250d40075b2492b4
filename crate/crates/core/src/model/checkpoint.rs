//! Single-file model checkpoints.
//!
//! Layout: 8-byte magic `CRWDFACE`, `u32` format version, `u64` header
//! length, JSON header (trait, side, architecture, score statistics,
//! history), `param_count` little-endian `f64` weights, then a CRC-32 of
//! every preceding byte. All integers are little-endian.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ArchitectureConfig, EpochRecord, Network, ScoreStats, TrainedModel};
use crate::error::{Error, Result};

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"CRWDFACE";

#[derive(Serialize, Deserialize)]
struct Header {
    trait_name: String,
    side: usize,
    architecture: ArchitectureConfig,
    score_stats: ScoreStats,
    history: Vec<EpochRecord>,
    best_epoch: Option<usize>,
    param_count: usize,
}

pub fn to_bytes(model: &TrainedModel) -> Vec<u8> {
    let header = Header {
        trait_name: model.trait_name.clone(),
        side: model.side(),
        architecture: model.architecture().clone(),
        score_stats: model.score_stats(),
        history: model.history.clone(),
        best_epoch: model.best_epoch,
        param_count: model.network().param_count(),
    };
    let json = serde_json::to_vec(&header).expect("header serializes");
    let params = model.network().params();
    let mut out = Vec::with_capacity(24 + json.len() + params.len() * 8);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for p in params {
        out.extend_from_slice(&p.to_le_bytes());
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

pub fn from_bytes(bytes: &[u8]) -> Result<TrainedModel> {
    let corrupt = |why: &str| Error::Checkpoint(format!("corrupt checkpoint: {why}"));
    if bytes.len() < 24 || &bytes[..8] != MAGIC {
        return Err(corrupt("missing magic header"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported checkpoint version {version} (this build reads {CHECKPOINT_VERSION})"
        )));
    }
    let header_len = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
    let body_start = 20usize
        .checked_add(header_len)
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| corrupt("truncated header"))?;
    let header: Header =
        serde_json::from_slice(&bytes[20..body_start]).map_err(|e| corrupt(&format!("header: {e}")))?;
    let expected_len = body_start + header.param_count * 8 + 4;
    if bytes.len() != expected_len {
        return Err(corrupt(&format!(
            "expected {expected_len} bytes, found {}",
            bytes.len()
        )));
    }
    let crc_at = expected_len - 4;
    let stored = u32::from_le_bytes(bytes[crc_at..].try_into().expect("4 bytes"));
    if crc32fast::hash(&bytes[..crc_at]) != stored {
        return Err(corrupt("checksum mismatch"));
    }
    let params: Vec<f64> = bytes[body_start..crc_at]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    let mut network = Network::build(&header.architecture, header.side)?;
    network.set_params(params)?;
    TrainedModel::new(
        header.trait_name,
        network,
        header.score_stats,
        header.history,
        header.best_epoch,
    )
}

pub fn save(model: &TrainedModel, path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(path, to_bytes(model)).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<TrainedModel> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes)
}
