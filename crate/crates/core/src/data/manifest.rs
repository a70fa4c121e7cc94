use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::Result;
use crate::metrics::Domain;

pub const MANIFEST_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
    OodTest,
}

impl Split {
    pub const ALL: [Split; 4] = [Split::Train, Split::Val, Split::Test, Split::OodTest];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
            Split::OodTest => "ood_test",
        }
    }

    pub fn domain(self) -> Domain {
        match self {
            Split::OodTest => Domain::OutOfDistribution,
            _ => Domain::InDistribution,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub split: Split,
    pub domain: Domain,
    /// Image path relative to the manifest.
    pub image: String,
    /// Ground-truth mask path relative to the manifest.
    pub mask: String,
    /// Generator substream the sample was drawn from.
    pub index: u64,
}

/// Index of a generated dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub schema_version: u32,
    pub seed: u64,
    /// `config_hash` of the generating configuration.
    pub config_hash: String,
    pub samples: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn split(&self, s: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.samples.iter().filter(move |e| e.split == s)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Ok(serde_json::from_slice(&std::fs::read(path)?)?)
    }
}

/// Hex SHA-256 of the compact JSON serialization of `cfg`.
pub fn config_hash<S: Serialize>(cfg: &S) -> Result<String> {
    let json = serde_json::to_vec(cfg)?;
    let digest = Sha256::digest(&json);
    Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
}
