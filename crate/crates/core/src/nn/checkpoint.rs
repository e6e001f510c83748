//! Model checkpoints.
//!
//! ```text
//! magic "PDESURM1" | version u32 = 1 | header length u64 | JSON header
//! param_count x f64 (little-endian)
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::network::{Network, NetworkSpec};
use crate::error::{Error, Result};
use crate::sampler::WhitenStats;

pub const MAGIC: &[u8; 8] = b"PDESURM1";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub spec: NetworkSpec,
    /// Input whitening computed on the training split.
    pub whitening: Option<WhitenStats>,
    /// SHA-256 of the canonical training configuration, hex encoded.
    pub config_hash: String,
    /// Free-form training metadata (optimizer settings, best epoch, ...).
    #[serde(default)]
    pub metadata: serde_json::Value,
    #[serde(skip)]
    pub params: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    spec: NetworkSpec,
    whitening: Option<WhitenStats>,
    config_hash: String,
    #[serde(default)]
    metadata: serde_json::Value,
    param_count: usize,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let expected = Network::new(&self.spec)?.param_count();
        if expected != self.params.len() {
            return Err(Error::ShapeMismatch(format!(
                "spec has {expected} parameters, checkpoint holds {}",
                self.params.len()
            )));
        }
        let header = serde_json::to_vec(&Header {
            spec: self.spec.clone(),
            whitening: self.whitening.clone(),
            config_hash: self.config_hash.clone(),
            metadata: self.metadata.clone(),
            param_count: self.params.len(),
        })?;
        let mut out = Vec::with_capacity(20 + header.len() + 8 * self.params.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for p in &self.params {
            out.extend_from_slice(&p.to_le_bytes());
        }
        Ok(out)
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        if buf.len() < 20 || &buf[..8] != MAGIC {
            return Err(Error::Format("bad magic, not a PDESURM1 checkpoint".into()));
        }
        let version = u32::from_le_bytes(buf[8..12].try_into().unwrap());
        if version != VERSION {
            return Err(Error::Format(format!("unsupported checkpoint version {version}")));
        }
        let hlen = u64::from_le_bytes(buf[12..20].try_into().unwrap());
        let hend = usize::try_from(hlen)
            .ok()
            .and_then(|l| l.checked_add(20))
            .filter(|&e| e <= buf.len())
            .ok_or_else(|| Error::Format("truncated header".into()))?;
        let header: Header = serde_json::from_slice(&buf[20..hend])?;
        let body = &buf[hend..];
        if body.len() != header.param_count * 8 {
            return Err(Error::Format(format!(
                "expected {} parameter bytes, found {}",
                header.param_count * 8,
                body.len()
            )));
        }
        let params = body
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect::<Vec<_>>();
        if Network::new(&header.spec)?.param_count() != params.len() {
            return Err(Error::Format("parameter count does not match the architecture".into()));
        }
        Ok(Self {
            spec: header.spec,
            whitening: header.whitening,
            config_hash: header.config_hash,
            metadata: header.metadata,
            params,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::build_single_conv_arch;

    fn sample() -> Checkpoint {
        let spec = build_single_conv_arch(4, 1, 2).unwrap();
        let n = Network::new(&spec).unwrap().param_count();
        Checkpoint {
            spec,
            whitening: Some(WhitenStats {
                mean: vec![1.0; 4],
                std: vec![0.5; 4],
            }),
            config_hash: "abc".into(),
            metadata: serde_json::json!({"epochs": 3}),
            params: (0..n).map(|i| i as f64 * 0.25 - 1.0).collect(),
        }
    }

    #[test]
    fn round_trip() {
        let ck = sample();
        let bytes = ck.to_bytes().unwrap();
        assert_eq!(&bytes[..8], b"PDESURM1");
        assert_eq!(Checkpoint::from_bytes(&bytes).unwrap(), ck);
    }

    #[test]
    fn rejects_damage() {
        let ck = sample();
        let bytes = ck.to_bytes().unwrap();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 8]).is_err());
        let mut bad = bytes.clone();
        bad[3] = b'?';
        assert!(Checkpoint::from_bytes(&bad).is_err());
        let mut short = ck;
        short.params.pop();
        assert!(short.to_bytes().is_err());
    }
}
