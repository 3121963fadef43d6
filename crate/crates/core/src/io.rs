//! Output files.
//!
//! Snapshots are raw little-endian `f64` arrays (species-major, first axis
//! fastest, full grid with zeros in the holes) with a JSON sidecar. Every
//! output directory receives `resolved_config.toml`, the configuration
//! with all defaults filled in.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const RESOLVED_CONFIG: &str = "resolved_config.toml";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotMeta {
    pub t: f64,
    pub epsilon: Option<f64>,
    pub h: f64,
    pub shape: Vec<usize>,
    pub species: usize,
    pub layout: String,
}

const LAYOUT: &str = "f64 little-endian, species-major, first axis fastest";

/// An output directory stamped with the resolved configuration.
#[derive(Debug, Clone)]
pub struct OutputDir {
    pub root: PathBuf,
}

impl OutputDir {
    pub fn create(root: impl Into<PathBuf>, resolved_config: &str) -> Result<Self> {
        let root = root.into();
        fs::create_dir_all(&root)?;
        fs::write(root.join(RESOLVED_CONFIG), resolved_config)?;
        Ok(OutputDir { root })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    /// Text output with LF line endings.
    pub fn write_text(&self, name: &str, content: &str) -> Result<PathBuf> {
        let path = self.path(name);
        fs::write(&path, content.replace("\r\n", "\n"))?;
        Ok(path)
    }

    pub fn write_json<T: Serialize>(&self, name: &str, value: &T) -> Result<PathBuf> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.write_text(name, &text)
    }

    /// `{stem}.bin` plus `{stem}.json`.
    pub fn write_snapshot(&self, stem: &str, meta: &SnapshotMeta, fields: &[Vec<f64>]) -> Result<PathBuf> {
        let n: usize = meta.shape.iter().product();
        if fields.len() != meta.species || fields.iter().any(|f| f.len() != n) {
            return Err(Error::Invariant(format!("snapshot `{stem}` does not match its shape")));
        }
        let mut bytes = Vec::with_capacity(8 * n * fields.len());
        for f in fields {
            for v in f {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
        }
        let path = self.path(&format!("{stem}.bin"));
        fs::write(&path, bytes)?;
        self.write_json(&format!("{stem}.json"), meta)?;
        Ok(path)
    }
}

pub fn snapshot_meta(t: f64, epsilon: Option<f64>, h: f64, shape: &crate::numerics::Shape) -> SnapshotMeta {
    SnapshotMeta {
        t,
        epsilon,
        h,
        shape: shape.extents[..shape.dim].to_vec(),
        species: 3,
        layout: LAYOUT.to_string(),
    }
}

/// Reads a snapshot written by [`OutputDir::write_snapshot`] from `{stem}.bin`.
pub fn read_snapshot(bin: &Path) -> Result<(SnapshotMeta, Vec<Vec<f64>>)> {
    let meta: SnapshotMeta = serde_json::from_str(&fs::read_to_string(bin.with_extension("json"))?)?;
    let bytes = fs::read(bin)?;
    let n: usize = meta.shape.iter().product();
    if bytes.len() != 8 * n * meta.species {
        return Err(Error::Invariant(format!("{} has {} bytes, expected {}", bin.display(), bytes.len(), 8 * n * meta.species)));
    }
    let values: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((meta, values.chunks(n).map(|c| c.to_vec()).collect()))
}
