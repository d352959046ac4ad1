//! Checkpoint container.
//!
//! ```text
//! b"FFORGE1" | u64 LE header length | header JSON | tensor data
//! ```
//!
//! The header holds the model spec, the tensor table (name and shape, in storage order)
//! and free-form metadata. Tensor data follows in table order as little-endian `f32`.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::model::{ModelSpec, Network};
use super::params::{ParamTensor, ParamVector};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 7] = b"FFORGE1";

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    model: ModelSpec,
    tensors: Vec<TensorEntry>,
    #[serde(default)]
    metadata: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: ModelSpec,
    pub params: ParamVector<f32>,
    pub metadata: serde_json::Value,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = Header {
            model: self.model.clone(),
            tensors: self
                .params
                .tensors()
                .iter()
                .map(|t| TensorEntry {
                    name: t.name.clone(),
                    shape: t.shape.clone(),
                })
                .collect(),
            metadata: self.metadata.clone(),
        };
        let json = serde_json::to_vec(&header)?;
        let mut out = Vec::with_capacity(MAGIC.len() + 8 + json.len() + 4 * self.params.total_dim());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for v in self.params.iter_values() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        Ok(out)
    }

    pub fn from_bytes(mut bytes: &[u8]) -> Result<Self> {
        let mut magic = [0u8; 7];
        bytes
            .read_exact(&mut magic)
            .map_err(|_| Error::Checkpoint("file too short".into()))?;
        if &magic != MAGIC {
            return Err(Error::Checkpoint("bad magic, not an FFORGE1 checkpoint".into()));
        }
        let mut len = [0u8; 8];
        bytes
            .read_exact(&mut len)
            .map_err(|_| Error::Checkpoint("truncated header length".into()))?;
        let len = u64::from_le_bytes(len) as usize;
        if bytes.len() < len {
            return Err(Error::Checkpoint("truncated header".into()));
        }
        let (json, mut data) = bytes.split_at(len);
        let header: Header = serde_json::from_slice(json)?;
        let mut tensors = Vec::with_capacity(header.tensors.len());
        for entry in header.tensors {
            let n: usize = entry.shape.iter().product();
            if data.len() < 4 * n {
                return Err(Error::Checkpoint(format!("tensor `{}` is truncated", entry.name)));
            }
            let (raw, rest) = data.split_at(4 * n);
            data = rest;
            let values = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            tensors.push(ParamTensor {
                name: entry.name,
                shape: entry.shape,
                data: values,
            });
        }
        if !data.is_empty() {
            return Err(Error::Checkpoint(format!("{} trailing bytes", data.len())));
        }
        let params = ParamVector::new(tensors)?;
        let net = Network::new(header.model.clone())?;
        let layout_ok = net
            .layout()
            .iter()
            .map(|(n, s)| (n.as_str(), s.as_slice()))
            .eq(params.tensors().iter().map(|t| (t.name.as_str(), t.shape.as_slice())));
        if !layout_ok {
            return Err(Error::Checkpoint("tensor table does not match the model spec".into()));
        }
        Ok(Self {
            model: header.model,
            params,
            metadata: header.metadata,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(&self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}
