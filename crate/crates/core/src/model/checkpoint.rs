//! Binary checkpoints.
//!
//! ```text
//! "MMB1" | version: u32 LE | header_len: u32 LE | header (UTF-8 JSON) | payload
//! ```
//!
//! The header is `{"config": ModelConfig, "tensors": [{name, dtype, shape,
//! byte_offset, byte_len}]}`; offsets are relative to the start of the
//! payload and tensors are stored little-endian in manifest order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use super::params::ParamStore;
use crate::error::{Error, Result};
use crate::numerics::Tensor;

pub const MAGIC: [u8; 4] = *b"MMB1";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Dtype {
    F32,
    #[default]
    F64,
}

impl Dtype {
    pub fn size(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::F64 => 8,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub dtype: Dtype,
    pub shape: Vec<usize>,
    pub byte_offset: u64,
    pub byte_len: u64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    tensors: Vec<TensorEntry>,
}

/// Serialize to bytes. `F32` storage rounds every value.
pub fn encode(config: &ModelConfig, params: &ParamStore, dtype: Dtype) -> Result<Vec<u8>> {
    let mut payload = Vec::new();
    let mut tensors = Vec::with_capacity(params.len());
    for (name, t) in params.iter() {
        let start = payload.len() as u64;
        for &v in t.data() {
            match dtype {
                Dtype::F64 => payload.extend_from_slice(&v.to_le_bytes()),
                Dtype::F32 => payload.extend_from_slice(&(v as f32).to_le_bytes()),
            }
        }
        tensors.push(TensorEntry {
            name: name.to_string(),
            dtype,
            shape: t.shape().to_vec(),
            byte_offset: start,
            byte_len: payload.len() as u64 - start,
        });
    }
    let header = serde_json::to_vec(&Header {
        config: config.clone(),
        tensors,
    })?;
    let mut out = Vec::with_capacity(12 + header.len() + payload.len());
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(&header);
    out.extend_from_slice(&payload);
    Ok(out)
}

fn read_u32(bytes: &[u8], at: usize, what: &str) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_le_bytes(b.try_into().expect("4-byte slice")))
        .ok_or_else(|| Error::Truncated(format!("missing {what}")))
}

pub fn decode(bytes: &[u8]) -> Result<(ModelConfig, ParamStore)> {
    let magic: [u8; 4] = bytes
        .get(..4)
        .ok_or_else(|| Error::Truncated("missing magic".into()))?
        .try_into()
        .expect("4-byte slice");
    if magic != MAGIC {
        return Err(Error::BadMagic(magic));
    }
    let version = read_u32(bytes, 4, "format version")?;
    if version != FORMAT_VERSION {
        return Err(Error::Version {
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    let header_len = read_u32(bytes, 8, "header length")? as usize;
    let header_bytes = bytes
        .get(12..12 + header_len)
        .ok_or_else(|| Error::Truncated(format!("header of {header_len} bytes")))?;
    let header: Header = serde_json::from_slice(header_bytes)?;
    let payload = &bytes[12 + header_len..];
    let mut params = ParamStore::new();
    for e in &header.tensors {
        let numel: usize = e.shape.iter().product();
        if e.byte_len as usize != numel * e.dtype.size() {
            return Err(Error::Data(format!(
                "tensor {} declares {} bytes for shape {:?}",
                e.name, e.byte_len, e.shape
            )));
        }
        let (start, end) = (e.byte_offset as usize, (e.byte_offset + e.byte_len) as usize);
        let raw = payload
            .get(start..end)
            .ok_or_else(|| Error::Truncated(format!("tensor table entry {}", e.name)))?;
        let data: Vec<f64> = match e.dtype {
            Dtype::F64 => raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect(),
            Dtype::F32 => raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4-byte chunk")) as f64)
                .collect(),
        };
        params.insert(e.name.clone(), Tensor::new(&e.shape, data)?);
    }
    Ok((header.config, params))
}

pub fn save_checkpoint(path: &Path, config: &ModelConfig, params: &ParamStore) -> Result<()> {
    let bytes = encode(config, params, Dtype::F64)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<(ModelConfig, ParamStore)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}
