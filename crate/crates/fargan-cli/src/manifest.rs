//! Run manifest, written before any long computation starts. Artifacts are
//! reproducible from the config hash plus the seed list; the wall clock is
//! for bookkeeping only.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::Path;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config_path: String,
    pub out_dir: String,
    pub wall_clock: String,
    /// SHA-256 over "blob <len>\0" + config bytes.
    pub config_sha256: String,
    pub seeds: Vec<u64>,
}

pub fn content_hash(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(format!("blob {}\0", bytes.len()).as_bytes());
    hasher.update(bytes);
    let digest = hasher.finalize();
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

impl RunManifest {
    pub fn new(command: &str, config_path: &Path, out_dir: &Path, config_bytes: &[u8], seeds: Vec<u64>) -> Self {
        Self {
            command: command.to_string(),
            config_path: config_path.display().to_string(),
            out_dir: out_dir.display().to_string(),
            wall_clock: chrono::Utc::now().to_rfc3339(),
            config_sha256: content_hash(config_bytes),
            seeds,
        }
    }
}
