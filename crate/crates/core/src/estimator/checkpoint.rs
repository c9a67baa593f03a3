//! Binary checkpoint container.
//!
//! Layout (little endian): magic `NEST`, `u32` version, `u64` length of a
//! JSON header `{config, metadata}`, the header, `u32` tensor count, then per
//! tensor a `u32` name length, the UTF-8 name, `u32` rank, `u64` dims and
//! `f64` values.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::EstimatorConfig;
use super::network::{Network, TensorSpec};
use crate::error::{Error, Result};
use crate::io::{write_atomic, Reader};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"NEST";
pub const CHECKPOINT_VERSION: u32 = 1;

/// A flat parameter (or gradient) vector with its named tensor layout.
#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensors {
    pub specs: Vec<TensorSpec>,
    pub values: Vec<f64>,
}

impl NamedTensors {
    pub fn get(&self, name: &str) -> Option<&[f64]> {
        self.specs.iter().find(|s| s.name == name).map(|s| &self.values[s.range()])
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.specs.iter().map(|s| s.name.as_str())
    }

    /// Fails unless names, shapes and order match `expected` exactly.
    pub fn check_layout(&self, expected: &[TensorSpec]) -> Result<()> {
        if self.specs.len() != expected.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} tensors, found {}",
                expected.len(),
                self.specs.len()
            )));
        }
        for (a, b) in self.specs.iter().zip(expected) {
            if a.name != b.name || a.shape != b.shape || a.offset != b.offset {
                return Err(Error::Checkpoint(format!(
                    "tensor {} {:?} does not match expected {} {:?}",
                    a.name, a.shape, b.name, b.shape
                )));
            }
        }
        let total: usize = expected.iter().map(TensorSpec::len).sum();
        if self.values.len() != total {
            return Err(Error::Checkpoint(format!("expected {total} values, found {}", self.values.len())));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingMetadata {
    /// Last completed stage: 0 (untrained), 1 or 2.
    pub stage: u32,
    pub stage1_epochs: usize,
    pub stage2_epochs: usize,
    pub final_contrastive: Option<f64>,
    pub final_regression: Option<f64>,
    pub tool_version: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorCheckpoint {
    pub config: EstimatorConfig,
    pub params: NamedTensors,
    pub metadata: TrainingMetadata,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    config: EstimatorConfig,
    metadata: TrainingMetadata,
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

impl EstimatorCheckpoint {
    /// Freshly initialized parameters for `config`.
    pub fn initialized(config: EstimatorConfig) -> Result<Self> {
        let net = Network::new(&config)?;
        let values = net.init_params(config.seed);
        Ok(Self {
            params: NamedTensors { specs: net.specs().to_vec(), values },
            metadata: TrainingMetadata { tool_version: env!("CARGO_PKG_VERSION").into(), ..Default::default() },
            config,
        })
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        let header = serde_json::to_vec(&Header { config: self.config.clone(), metadata: self.metadata.clone() })?;
        let mut out = Vec::with_capacity(32 + header.len() + self.params.values.len() * 8);
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        out.extend_from_slice(&(self.params.specs.len() as u32).to_le_bytes());
        for spec in &self.params.specs {
            out.extend_from_slice(&(spec.name.len() as u32).to_le_bytes());
            out.extend_from_slice(spec.name.as_bytes());
            out.extend_from_slice(&(spec.shape.len() as u32).to_le_bytes());
            for &d in &spec.shape {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for v in &self.params.values[spec.range()] {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    /// Decodes and validates against the layout implied by the stored config.
    pub fn decode(bytes: &[u8]) -> Result<Self> {
        Self::decode_inner(bytes).map_err(|e| match e {
            Error::Checkpoint(_) => e,
            other => bad(other.to_string()),
        })
    }

    fn decode_inner(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes, "checkpoint");
        if r.take(4)? != CHECKPOINT_MAGIC {
            return Err(bad("not a checkpoint (bad magic)"));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(bad(format!("unsupported checkpoint version {version}")));
        }
        let hlen = usize::try_from(r.u64()?).map_err(|_| bad("header too large"))?;
        let header: Header = serde_json::from_slice(r.take(hlen)?).map_err(|e| bad(format!("header: {e}")))?;
        let net = Network::new(&header.config)?;
        let count = r.u32()? as usize;
        let mut specs = Vec::with_capacity(count.min(1024));
        let mut values = Vec::with_capacity(net.n_params());
        for _ in 0..count {
            let nlen = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(nlen)?).map_err(|_| bad("tensor name is not UTF-8"))?.to_string();
            let rank = r.u32()? as usize;
            if rank > 8 {
                return Err(bad(format!("tensor {name} has implausible rank {rank}")));
            }
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(usize::try_from(r.u64()?).map_err(|_| bad("dimension too large"))?);
            }
            let len = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d)).ok_or_else(|| bad("tensor too large"))?;
            if len.checked_mul(8).is_none_or(|b| b > r.remaining()) {
                return Err(bad(format!("tensor {name} is truncated")));
            }
            let offset = values.len();
            for _ in 0..len {
                let v = f64::from_le_bytes(r.take(8)?.try_into().unwrap());
                if !v.is_finite() {
                    return Err(bad(format!("tensor {name} holds a non-finite value")));
                }
                values.push(v);
            }
            specs.push(TensorSpec { name, shape, offset });
        }
        if r.remaining() != 0 {
            return Err(bad(format!("{} trailing bytes", r.remaining())));
        }
        let params = NamedTensors { specs, values };
        params.check_layout(net.specs())?;
        Ok(Self { config: header.config, params, metadata: header.metadata })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.encode()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::decode(&std::fs::read(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimator::{Activation, ConvStage};

    fn tiny() -> EstimatorConfig {
        EstimatorConfig {
            patch_height: 8,
            patch_width: 8,
            extractor: vec![ConvStage { kernel: 3, stride: 1, width: 3, activation: Activation::Tanh }],
            feature_dim: 6,
            projector: vec![5],
            head: vec![4],
            seed: 11,
            ..EstimatorConfig::default()
        }
    }

    #[test]
    fn round_trip_is_exact() {
        let mut ck = EstimatorCheckpoint::initialized(tiny()).unwrap();
        ck.metadata.final_regression = Some(0.1 + 0.2);
        ck.config.tau_loss = 0.1 + 0.2;
        let back = EstimatorCheckpoint::decode(&ck.encode().unwrap()).unwrap();
        assert_eq!(back, ck);
        assert!(back.params.values.iter().zip(&ck.params.values).all(|(a, b)| a.to_bits() == b.to_bits()));
        assert!(back.params.get("extractor.conv0.weight").is_some());
    }

    #[test]
    fn corruption_is_rejected() {
        let bytes = EstimatorCheckpoint::initialized(tiny()).unwrap().encode().unwrap();
        for cut in [0, 3, 10, bytes.len() / 2, bytes.len() - 1] {
            assert!(matches!(EstimatorCheckpoint::decode(&bytes[..cut]), Err(Error::Checkpoint(_))), "cut {cut}");
        }
        let mut bad_magic = bytes.clone();
        bad_magic[0] = b'X';
        assert!(matches!(EstimatorCheckpoint::decode(&bad_magic), Err(Error::Checkpoint(_))));
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(matches!(EstimatorCheckpoint::decode(&extra), Err(Error::Checkpoint(_))));
        let mut version = bytes;
        version[4] = 9;
        assert!(matches!(EstimatorCheckpoint::decode(&version), Err(Error::Checkpoint(_))));
    }

    #[test]
    fn layout_mismatch_is_rejected() {
        let ck = EstimatorCheckpoint::initialized(tiny()).unwrap();
        let mut other = tiny();
        other.projector = vec![7];
        let net = Network::new(&other).unwrap();
        assert!(matches!(ck.params.check_layout(net.specs()), Err(Error::Checkpoint(_))));
    }
}
