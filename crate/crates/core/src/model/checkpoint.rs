//! Single-file checkpoints.
//!
//! Layout: 8-byte magic `DCLPCKPT`, a little-endian `u64` header length, the
//! JSON header, then every parameter as raw little-endian `f64` values in
//! header manifest order.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use super::network::Model;
use crate::error::{Error, Result};
use crate::nn::Tensor;

const MAGIC: &[u8; 8] = b"DCLPCKPT";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub config: ModelConfig,
    pub seed: u64,
    pub step: u64,
    /// Free-form provenance (effective run configuration, variant, ...).
    #[serde(default)]
    pub extra: serde_json::Value,
    pub params: Vec<ManifestEntry>,
}

pub fn encode(model: &Model, seed: u64, step: u64, extra: serde_json::Value) -> Result<Vec<u8>> {
    let header = CheckpointHeader {
        config: model.config.clone(),
        seed,
        step,
        extra,
        params: model.params.iter().map(|(n, t)| ManifestEntry { name: n.to_string(), shape: t.shape().to_vec() }).collect(),
    };
    let json = serde_json::to_vec(&header)?;
    let mut out = Vec::with_capacity(16 + json.len() + model.params.numel() * 8);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for t in model.params.tensors() {
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode(bytes: &[u8], origin: &str) -> Result<(CheckpointHeader, Model)> {
    let corrupt = |msg: &str| Error::Parse { path: origin.to_string(), line: 0, msg: msg.to_string() };
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(corrupt("not a checkpoint (bad magic)"));
    }
    let hlen = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let body = bytes.get(16..16 + hlen).ok_or_else(|| corrupt("truncated header"))?;
    let header: CheckpointHeader = serde_json::from_slice(body)?;
    let mut model = Model::new(header.config.clone(), header.seed)?;

    let mut offset = 16 + hlen;
    let mut values = Vec::with_capacity(header.params.len());
    for (entry, (name, expected)) in header.params.iter().zip(model.params.iter()) {
        if entry.name != name || entry.shape != expected.shape() {
            return Err(corrupt(&format!("manifest entry {} {:?} does not match model {name} {:?}", entry.name, entry.shape, expected.shape())));
        }
        let n: usize = entry.shape.iter().product();
        let raw = bytes.get(offset..offset + 8 * n).ok_or_else(|| corrupt("truncated parameter data"))?;
        let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
        values.push(Tensor::new(entry.shape.clone(), data)?);
        offset += 8 * n;
    }
    if header.params.len() != model.params.len() {
        return Err(corrupt(&format!("{} manifest entries for {} parameters", header.params.len(), model.params.len())));
    }
    if offset != bytes.len() {
        return Err(corrupt("trailing bytes after parameter data"));
    }
    model.params.load_values(values)?;
    Ok((header, model))
}

pub fn save(path: &Path, model: &Model, seed: u64, step: u64, extra: serde_json::Value) -> Result<()> {
    let bytes = encode(model, seed, step, extra)?;
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<(CheckpointHeader, Model)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, &path.display().to_string())
}
