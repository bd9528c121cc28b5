//! Checkpoint files: a JSON header next to a flat little-endian `f64` blob.
//!
//! For a checkpoint path `run/reward.ckpt` the header is written to
//! `run/reward.ckpt.json` and the parameters to `run/reward.ckpt.bin`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::params::BlockLayout;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub model_kind: String,
    pub layer_sizes: Vec<usize>,
    pub latent_dim: usize,
    pub seed: u64,
    pub step: u64,
    /// Block names and shapes, in blob order.
    #[serde(default)]
    pub blocks: Vec<BlockLayout>,
    /// Model-specific architecture fields.
    #[serde(default)]
    pub arch: serde_json::Value,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub params: Vec<f64>,
}

fn sidecar(path: &Path, ext: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".");
    s.push(ext);
    PathBuf::from(s)
}

pub fn header_path(path: &Path) -> PathBuf {
    sidecar(path, "json")
}

pub fn blob_path(path: &Path) -> PathBuf {
    sidecar(path, "bin")
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        let expected: usize = self.header.blocks.iter().map(|b| b.shape.iter().product::<usize>()).sum();
        if !self.header.blocks.is_empty() && expected != self.params.len() {
            return Err(Error::shape("checkpoint", &[expected], &[self.params.len()]));
        }
        if let Some(dir) = path.parent() {
            if !dir.as_os_str().is_empty() {
                fs::create_dir_all(dir)?;
            }
        }
        fs::write(header_path(path), serde_json::to_vec_pretty(&self.header)?)?;
        let mut blob = Vec::with_capacity(self.params.len() * 8);
        for v in &self.params {
            blob.extend_from_slice(&v.to_le_bytes());
        }
        fs::write(blob_path(path), blob)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let header: CheckpointHeader = serde_json::from_slice(&fs::read(header_path(path))?)?;
        let blob = fs::read(blob_path(path))?;
        if blob.len() % 8 != 0 {
            return Err(Error::contract(format!(
                "checkpoint blob length {} is not a multiple of 8",
                blob.len()
            )));
        }
        let params = blob
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        Ok(Checkpoint { header, params })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let ck = Checkpoint {
            header: CheckpointHeader {
                model_kind: "btl".into(),
                layer_sizes: vec![2, 4, 1],
                latent_dim: 0,
                seed: 9,
                step: 12,
                blocks: vec![BlockLayout {
                    name: "w".into(),
                    shape: vec![3],
                }],
                arch: serde_json::json!({"hidden": 4}),
            },
            params: vec![0.1, -2.5e-300, f64::MAX],
        };
        ck.save(&path).unwrap();
        assert!(header_path(&path).exists() && blob_path(&path).exists());
        assert_eq!(Checkpoint::load(&path).unwrap(), ck);
    }
}
