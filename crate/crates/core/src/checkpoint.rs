//! Binary checkpoint container shared by every trainable model.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! b"DWDN" | version: u32 | config_len: u32 | config: JSON (config_len bytes) | weights: f32...
//! ```
//!
//! Weights are flat arrays concatenated in the model's declaration order.

use std::io::{Read, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use sha2::{Digest, Sha256};
use thiserror::Error;

pub const MAGIC: &[u8; 4] = b"DWDN";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("not a checkpoint (bad magic bytes)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    UnsupportedVersion(u32),
    #[error("truncated checkpoint: {0}")]
    Truncated(String),
    #[error("checkpoint config: {0}")]
    Config(#[from] serde_json::Error),
    #[error("checkpoint holds {found} weights, architecture needs {expected}")]
    WeightCount { expected: usize, found: usize },
    #[error("checkpoint i/o: {0}")]
    Io(#[from] std::io::Error),
}

/// Decoded container: architecture JSON plus flat weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: serde_json::Value,
    pub weights: Vec<f32>,
}

impl Checkpoint {
    pub fn new<C: Serialize>(config: &C, weights: impl IntoIterator<Item = f64>) -> Self {
        Checkpoint {
            config: serde_json::to_value(config).expect("config serializes"),
            weights: weights.into_iter().map(|w| w as f32).collect(),
        }
    }

    pub fn config_as<C: DeserializeOwned>(&self) -> Result<C, CheckpointError> {
        Ok(serde_json::from_value(self.config.clone())?)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let json = serde_json::to_vec(&self.config).expect("config serializes");
        let mut out = Vec::with_capacity(12 + json.len() + 4 * self.weights.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        for w in &self.weights {
            out.extend_from_slice(&w.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        if bytes.len() < 4 || &bytes[..4] != MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        let word = |at: usize| -> Result<u32, CheckpointError> {
            bytes
                .get(at..at + 4)
                .map(|b| u32::from_le_bytes(b.try_into().expect("4 bytes")))
                .ok_or_else(|| CheckpointError::Truncated("header".into()))
        };
        let version = word(4)?;
        if version != FORMAT_VERSION {
            return Err(CheckpointError::UnsupportedVersion(version));
        }
        let len = word(8)? as usize;
        let json = bytes
            .get(12..12 + len)
            .ok_or_else(|| CheckpointError::Truncated("config".into()))?;
        let config = serde_json::from_slice(json)?;
        let body = &bytes[12 + len..];
        if body.len() % 4 != 0 {
            return Err(CheckpointError::Truncated("weight array".into()));
        }
        let weights = body
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")))
            .collect();
        Ok(Checkpoint { config, weights })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), CheckpointError> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, CheckpointError> {
        let mut buf = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut buf)?;
        Checkpoint::from_bytes(&buf)
    }
}

/// Hex SHA-256 of a file, for run manifests.
pub fn file_sha256(path: impl AsRef<Path>) -> std::io::Result<String> {
    let bytes = std::fs::read(path)?;
    Ok(Sha256::digest(&bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect())
}
