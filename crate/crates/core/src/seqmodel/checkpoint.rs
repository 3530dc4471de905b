//! Checkpoint snapshots and their on-disk format.
//!
//! ```text
//! "GSCK" | version: u32 LE | header_len: u32 LE | header: JSON | params: f32 LE * total
//! ```
//! The header carries the model config, epoch, validation loss and the
//! component layout table.

use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use super::model::Seq2Seq;
use super::params::{Layout, ParameterSet};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"GSCK";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointSnapshot {
    pub epoch: u32,
    pub params: ParameterSet<f32>,
    pub validation_loss: f64,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    epoch: u32,
    validation_loss: f64,
    layout: Layout,
}

impl CheckpointSnapshot {
    pub fn to_bytes(&self, config: &ModelConfig) -> Result<Vec<u8>> {
        let header = Header {
            config: config.clone(),
            epoch: self.epoch,
            validation_loss: self.validation_loss,
            layout: (*self.params.layout).clone(),
        };
        let json = serde_json::to_vec(&header)?;
        let mut out = Vec::with_capacity(12 + json.len() + 4 * self.params.len());
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        for v in &self.params.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<(ModelConfig, CheckpointSnapshot)> {
        let fail = |reason: String| Error::Format { path: path.to_path_buf(), reason };
        if bytes.len() < 12 || &bytes[..4] != CHECKPOINT_MAGIC {
            return Err(fail("missing GSCK magic".into()));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != CHECKPOINT_VERSION {
            return Err(fail(format!("unsupported version {version}")));
        }
        let hlen = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let body = bytes.get(12..12 + hlen).ok_or_else(|| fail("truncated header".into()))?;
        let header: Header = serde_json::from_slice(body)?;
        if header.epoch == 0 {
            return Err(fail("epoch must be >= 1".into()));
        }
        let model = Seq2Seq::new(header.config.clone())?;
        if **model.layout() != header.layout {
            return Err(fail("layout table does not match the config".into()));
        }
        let payload = &bytes[12 + hlen..];
        if payload.len() != 4 * header.layout.total {
            return Err(fail(format!("payload has {} bytes, expected {}", payload.len(), 4 * header.layout.total)));
        }
        let values = payload.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
        Ok((
            header.config,
            CheckpointSnapshot {
                epoch: header.epoch,
                params: ParameterSet { layout: Arc::new(header.layout), values },
                validation_loss: header.validation_loss,
            },
        ))
    }

    pub fn save(&self, config: &ModelConfig, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes(config)?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<(ModelConfig, CheckpointSnapshot)> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn file_round_trip_is_bit_exact() {
        let config = ModelConfig::toy(9, 11);
        let model = Seq2Seq::new(config.clone()).unwrap();
        let snap = CheckpointSnapshot { epoch: 3, params: model.init_params(7, 0.08), validation_loss: 1.25 };
        let bytes = snap.to_bytes(&config).unwrap();
        assert_eq!(&bytes[..4], b"GSCK");
        let (c2, back) = CheckpointSnapshot::from_bytes(&bytes, Path::new("x")).unwrap();
        assert_eq!(c2, config);
        assert_eq!(back, snap);
    }

    #[test]
    fn truncated_payload_is_rejected() {
        let config = ModelConfig::toy(9, 11);
        let model = Seq2Seq::new(config.clone()).unwrap();
        let snap = CheckpointSnapshot { epoch: 1, params: model.init_params(7, 0.08), validation_loss: 0.0 };
        let bytes = snap.to_bytes(&config).unwrap();
        assert!(CheckpointSnapshot::from_bytes(&bytes[..bytes.len() - 4], Path::new("x")).is_err());
        let mut wrong = bytes.clone();
        wrong[0] = b'X';
        assert!(CheckpointSnapshot::from_bytes(&wrong, Path::new("x")).is_err());
    }
}
