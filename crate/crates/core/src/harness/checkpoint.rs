//! Binary checkpoints: magic, version, JSON header, little-endian f64 payload.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::ModelConfig;
use crate::corpus::Vocabulary;
use crate::ds_graph::AdjacencyMatrix;
use crate::error::{OridError, Result};
use crate::model::OridModel;
use crate::params::ParamGroup;
use crate::tensor::Mat;

pub const MAGIC: &[u8; 8] = b"ORIDCKPT";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, Serialize, Deserialize)]
struct ParamHeader {
    name: String,
    group: ParamGroup,
    rows: usize,
    cols: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    vocab: Vocabulary,
    adjacency: Vec<f64>,
    params: Vec<ParamHeader>,
    payload_sha256: String,
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn to_bytes(model: &OridModel) -> Result<Vec<u8>> {
    let mut payload = Vec::with_capacity(model.params.scalar_count() * 8);
    for e in model.params.entries() {
        for x in e.value.data() {
            payload.extend_from_slice(&x.to_le_bytes());
        }
    }
    let header = Header {
        config: model.config.clone(),
        vocab: model.vocab.clone(),
        adjacency: model.adjacency.as_mat().data().to_vec(),
        params: model
            .params
            .entries()
            .iter()
            .map(|e| ParamHeader { name: e.name.clone(), group: e.group, rows: e.value.rows(), cols: e.value.cols() })
            .collect(),
        payload_sha256: hex(&Sha256::digest(&payload)),
    };
    let json = serde_json::to_vec(&header)?;
    let mut out = Vec::with_capacity(20 + json.len() + payload.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&payload);
    Ok(out)
}

pub fn from_bytes(bytes: &[u8]) -> Result<OridModel> {
    let bad = |m: String| OridError::Checkpoint(m);
    let mut r = bytes;
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(|_| bad("truncated before magic".into()))?;
    if &magic != MAGIC {
        return Err(bad("not a checkpoint (bad magic)".into()));
    }
    let mut u32b = [0u8; 4];
    r.read_exact(&mut u32b).map_err(|_| bad("truncated version".into()))?;
    let version = u32::from_le_bytes(u32b);
    if version != VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let mut u64b = [0u8; 8];
    r.read_exact(&mut u64b).map_err(|_| bad("truncated header length".into()))?;
    let hlen = u64::from_le_bytes(u64b) as usize;
    if r.len() < hlen {
        return Err(bad("truncated header".into()));
    }
    let header: Header = serde_json::from_slice(&r[..hlen])?;
    let payload = &r[hlen..];
    if hex(&Sha256::digest(payload)) != header.payload_sha256 {
        return Err(bad("payload hash mismatch".into()));
    }
    let adjacency = AdjacencyMatrix::from_mat(Mat::from_vec(6, 6, header.adjacency)?)?;
    let mut model = OridModel::new(header.config, header.vocab, adjacency, 0)?;
    if model.params.len() != header.params.len() {
        return Err(bad(format!("{} parameters stored, model has {}", header.params.len(), model.params.len())));
    }
    let mut floats = payload.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")));
    for (entry, ph) in model.params.entries_mut().iter_mut().zip(&header.params) {
        if entry.name != ph.name || entry.value.shape() != (ph.rows, ph.cols) || entry.group != ph.group {
            return Err(bad(format!("parameter '{}' {:?} does not match stored '{}' {:?}", entry.name, entry.value.shape(), ph.name, (ph.rows, ph.cols))));
        }
        for x in entry.value.data_mut() {
            *x = floats.next().ok_or_else(|| bad("payload too short".into()))?;
        }
    }
    if floats.next().is_some() || !payload.len().is_multiple_of(8) {
        return Err(bad("payload has trailing bytes".into()));
    }
    Ok(model)
}

pub fn save(model: &OridModel, path: impl AsRef<Path>) -> Result<()> {
    let bytes = to_bytes(model)?;
    let mut f = std::fs::File::create(path)?;
    f.write_all(&bytes)?;
    Ok(())
}

pub fn load(path: impl AsRef<Path>) -> Result<OridModel> {
    from_bytes(&std::fs::read(path)?)
}
