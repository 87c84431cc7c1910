//! Binary checkpoints of a trained embedding network and its posterior.
//!
//! Layout: the 8-byte magic, the JSON header length as a little-endian
//! u64, the JSON header, then every tensor as little-endian f64 in header
//! order.

use std::fs;
use std::path::Path;

use cael_core::models::net::BatchNormStats;
use cael_core::models::{EmbeddingNet, NetShape, PosteriorModel};
use serde::{Deserialize, Serialize};

use crate::error::{io_error, HarnessError, Result};

pub const MAGIC: &[u8; 8] = b"CAELCKP1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    shape: NetShape,
    dropout: f64,
    posterior_features: usize,
    posterior_actions: usize,
    /// Name and length of each tensor, in file order.
    tensors: Vec<(String, usize)>,
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub net: EmbeddingNet,
    pub posterior: PosteriorModel,
}

impl Checkpoint {
    fn tensors(&self) -> Vec<(&'static str, &[f64])> {
        let s = self.net.bn_stats();
        vec![
            ("params", self.net.params()),
            ("bn_mean1", &s.mean1),
            ("bn_var1", &s.var1),
            ("bn_mean2", &s.mean2),
            ("bn_var2", &s.var2),
            ("posterior_weights", self.posterior.weights()),
            ("posterior_intercept", self.posterior.intercept()),
            ("posterior_shift", self.posterior.shift()),
            ("posterior_scale", self.posterior.scale()),
        ]
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let tensors = self.tensors();
        let header = Header {
            shape: self.net.shape(),
            dropout: self.net.dropout(),
            posterior_features: self.posterior.feature_dim(),
            posterior_actions: self.posterior.num_actions(),
            tensors: tensors.iter().map(|(n, t)| (n.to_string(), t.len())).collect(),
        };
        let json = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::with_capacity(16 + json.len() + 8 * tensors.iter().map(|t| t.1.len()).sum::<usize>());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for (_, t) in tensors {
            for v in t {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| HarnessError::Data(format!("checkpoint: {m}"));
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err(bad("not a checkpoint file"));
        }
        let len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
        let json = bytes.get(16..16 + len).ok_or_else(|| bad("truncated header"))?;
        let header: Header = serde_json::from_slice(json).map_err(|e| bad(&e.to_string()))?;
        let mut rest = &bytes[16 + len..];
        let mut tensors = Vec::with_capacity(header.tensors.len());
        for (name, n) in &header.tensors {
            let size = n.checked_mul(8).ok_or_else(|| bad("tensor too large"))?;
            if rest.len() < size {
                return Err(bad(&format!("truncated tensor {name}")));
            }
            let (chunk, tail) = rest.split_at(size);
            tensors.push(chunk.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect::<Vec<_>>());
            rest = tail;
        }
        if !rest.is_empty() {
            return Err(bad("trailing bytes"));
        }
        let expected = ["params", "bn_mean1", "bn_var1", "bn_mean2", "bn_var2", "posterior_weights", "posterior_intercept", "posterior_shift", "posterior_scale"];
        if header.tensors.iter().map(|t| t.0.as_str()).ne(expected) {
            return Err(bad("unexpected tensor list"));
        }
        let mut it = tensors.into_iter();
        let mut next = || it.next().expect("length checked");
        let params = next();
        let stats = BatchNormStats { mean1: next(), var1: next(), mean2: next(), var2: next() };
        let net = EmbeddingNet::from_parts(header.shape, params, stats, header.dropout).map_err(|e| bad(&e.to_string()))?;
        let (w, b, shift, scale) = (next(), next(), next(), next());
        let posterior = PosteriorModel::from_parts_standardized(
            header.posterior_features,
            header.posterior_actions,
            w,
            b,
            shift,
            scale,
        )
        .map_err(|e| bad(&e.to_string()))?;
        Ok(Checkpoint { net, posterior })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| io_error(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path).map_err(|e| io_error(path, e))?)
    }
}
