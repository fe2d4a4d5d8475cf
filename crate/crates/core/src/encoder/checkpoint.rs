//! Checkpoint file: the 8-byte magic `LABCKPT1`, a little-endian `u64`
//! header length, the JSON header, then every parameter as little-endian
//! `f64` in layer order (weight row-major, then bias).

use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use super::{Activation, DenseLayer, EncoderParams};
use crate::error::{LabError, Result};
use crate::image::ImageDims;

pub const MAGIC: &[u8; 8] = b"LABCKPT1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerShape {
    pub in_dim: usize,
    pub out_dim: usize,
    pub activation: Activation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub input: ImageDims,
    pub layers: Vec<LayerShape>,
    pub step: u64,
    /// Training configuration that produced the weights.
    pub config: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub params: EncoderParams,
}

impl Checkpoint {
    pub fn new(params: EncoderParams, step: u64, config: serde_json::Value) -> Self {
        let layers = params
            .layers()
            .iter()
            .map(|l| LayerShape {
                in_dim: l.in_dim(),
                out_dim: l.out_dim(),
                activation: l.activation,
            })
            .collect();
        Self {
            header: CheckpointHeader {
                input: params.input_dims(),
                layers,
                step,
                config,
            },
            params,
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = serde_json::to_vec(&self.header)?;
        let mut out = Vec::with_capacity(16 + header.len() + 8 * self.params.num_params());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for v in self.params.to_flat() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> std::result::Result<Self, String> {
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err("missing checkpoint magic".into());
        }
        let header_len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
        let body = bytes
            .get(16..16 + header_len)
            .ok_or("truncated header")?;
        let header: CheckpointHeader = serde_json::from_slice(body).map_err(|e| e.to_string())?;
        let blob = &bytes[16 + header_len..];
        let expected: usize = header
            .layers
            .iter()
            .map(|l| l.in_dim * l.out_dim + l.out_dim)
            .sum();
        if blob.len() != 8 * expected {
            return Err(format!(
                "weight blob has {} bytes, header describes {}",
                blob.len(),
                8 * expected
            ));
        }
        let mut values = blob
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")));
        let layers = header
            .layers
            .iter()
            .map(|s| {
                let weight = Array2::from_shape_fn((s.in_dim, s.out_dim), |_| {
                    values.next().expect("length checked")
                });
                let bias = Array1::from_shape_fn(s.out_dim, |_| values.next().expect("length checked"));
                DenseLayer {
                    weight,
                    bias,
                    activation: s.activation,
                }
            })
            .collect();
        let params = EncoderParams::new(header.input, layers).map_err(|e| e.to_string())?;
        Ok(Self { header, params })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent).map_err(|e| LabError::io(parent, e))?;
        }
        fs::write(path, self.to_bytes()?).map_err(|e| LabError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| LabError::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|reason| LabError::Format {
            path: path.to_path_buf(),
            reason,
        })
    }
}
