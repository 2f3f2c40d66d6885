//! Run manifests: enough to reproduce an output byte for byte.
//!
//! A manifest records the subcommand, the fully resolved configuration
//! (after flag overrides) with its hash, the seeds in play and the
//! crate versions. Deliberately no timestamps or hostnames: rerunning
//! the same command must produce the identical manifest.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CrateVersions {
    pub cartographer: String,
    pub pipeline: String,
    pub raster: String,
    pub autodiff: String,
}

impl CrateVersions {
    pub fn current() -> Self {
        Self {
            cartographer: env!("CARGO_PKG_VERSION").to_string(),
            pipeline: pipeline::VERSION.to_string(),
            raster: raster::VERSION.to_string(),
            autodiff: autodiff::VERSION.to_string(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    /// SHA-256 of the canonical (key-sorted, non-pretty) JSON of `config`.
    pub config_sha256: String,
    pub seeds: Vec<u64>,
    pub versions: CrateVersions,
    /// The configuration actually used, after flag overrides. For
    /// `gen-synthetic` this is the scene spec instead.
    pub config: serde_json::Value,
}

/// Hex SHA-256 of the canonical JSON form. Keys are sorted by the
/// `serde_json::Value` map, so the hash does not depend on struct
/// field order.
pub fn config_hash<T: Serialize>(cfg: &T) -> Result<String> {
    let value = serde_json::to_value(cfg).context("serializing config for hashing")?;
    let canonical = serde_json::to_string(&value).context("canonicalizing config")?;
    let digest = Sha256::digest(canonical.as_bytes());
    let mut hex = String::with_capacity(64);
    for byte in digest {
        use std::fmt::Write;
        write!(hex, "{byte:02x}").expect("hex formatting");
    }
    Ok(hex)
}

impl RunManifest {
    pub fn new<T: Serialize>(command: &str, cfg: &T, seeds: Vec<u64>) -> Result<Self> {
        Ok(Self {
            command: command.to_string(),
            config_sha256: config_hash(cfg)?,
            seeds,
            versions: CrateVersions::current(),
            config: serde_json::to_value(cfg).context("embedding config in manifest")?,
        })
    }

    /// Writes `<outputs>/manifests/<command>.json`, creating the
    /// directory, and returns the path.
    pub fn write(&self, outputs: &Path) -> Result<PathBuf> {
        let dir = outputs.join("manifests");
        std::fs::create_dir_all(&dir)
            .with_context(|| format!("creating {}", dir.display()))?;
        let path = dir.join(format!("{}.json", self.command));
        let mut body = serde_json::to_string_pretty(self).context("serializing manifest")?;
        body.push('\n');
        std::fs::write(&path, body).with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }
}
