//! Flat parameter snapshots and their on-disk format.
//!
//! Binary layout: an 8-byte little-endian unsigned count followed by `count`
//! little-endian IEEE-754 single-precision floats. A sidecar text file next to
//! each snapshot records the task id and the architecture hash.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{DiscoError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ParameterSnapshot {
    pub task_id: usize,
    pub values: Vec<f64>,
}

impl ParameterSnapshot {
    pub fn count(&self) -> usize {
        self.values.len()
    }

    /// Writes `<path>` and the sidecar `<path>.txt`.
    pub fn save(&self, path: &Path, architecture_hash: &str) -> Result<()> {
        write_vector(path, &self.values)?;
        let sidecar = SnapshotSidecar {
            task_id: self.task_id,
            architecture_hash: architecture_hash.to_string(),
            count: self.values.len(),
        };
        let text = toml::to_string(&sidecar).expect("sidecar serializes");
        fs::write(sidecar_path(path), text).map_err(|e| DiscoError::io(sidecar_path(path), e))
    }

    /// Reads a snapshot written by [`ParameterSnapshot::save`]. Values come
    /// back widened from single precision.
    pub fn load(path: &Path) -> Result<(Self, SnapshotSidecar)> {
        let values = read_vector(path)?;
        let side = sidecar_path(path);
        let text = fs::read_to_string(&side).map_err(|e| DiscoError::io(&side, e))?;
        let sidecar: SnapshotSidecar =
            toml::from_str(&text).map_err(|e| DiscoError::artifact(&side, e.to_string()))?;
        if sidecar.count != values.len() {
            return Err(DiscoError::artifact(
                path,
                format!(
                    "sidecar count {} but file holds {}",
                    sidecar.count,
                    values.len()
                ),
            ));
        }
        Ok((
            ParameterSnapshot {
                task_id: sidecar.task_id,
                values,
            },
            sidecar,
        ))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SnapshotSidecar {
    pub task_id: usize,
    pub architecture_hash: String,
    pub count: usize,
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut name = path.as_os_str().to_owned();
    name.push(".txt");
    PathBuf::from(name)
}

/// Encode a vector in the snapshot binary format.
pub fn encode_vector(values: &[f64]) -> Vec<u8> {
    let mut bytes = Vec::with_capacity(8 + 4 * values.len());
    bytes.extend_from_slice(&(values.len() as u64).to_le_bytes());
    for &v in values {
        bytes.extend_from_slice(&(v as f32).to_le_bytes());
    }
    bytes
}

pub fn decode_vector(bytes: &[u8]) -> std::result::Result<Vec<f64>, String> {
    if bytes.len() < 8 {
        return Err("shorter than the 8-byte count header".into());
    }
    let count = u64::from_le_bytes(bytes[..8].try_into().unwrap()) as usize;
    let body = &bytes[8..];
    if body.len() != count * 4 {
        return Err(format!(
            "header says {count} floats but body has {} bytes",
            body.len()
        ));
    }
    Ok(body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect())
}

pub fn write_vector(path: &Path, values: &[f64]) -> Result<()> {
    let mut file = fs::File::create(path).map_err(|e| DiscoError::io(path, e))?;
    file.write_all(&encode_vector(values))
        .map_err(|e| DiscoError::io(path, e))
}

pub fn read_vector(path: &Path) -> Result<Vec<f64>> {
    let bytes = fs::read(path).map_err(|e| DiscoError::io(path, e))?;
    decode_vector(&bytes).map_err(|m| DiscoError::artifact(path, m))
}
