//! Run manifests: which config, seeds and input artifacts produced a directory.
//!
//! Content hashes follow git's object naming (`sha256("blob <len>\0" ‖ bytes)`),
//! so they can be compared against `git hash-object --object-format=sha256`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const MANIFEST_VERSION: u32 = 1;

pub fn blob_hash(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", bytes.len()).as_bytes());
    h.update(bytes);
    hex::encode(h.finalize())
}

pub fn file_hash(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(blob_hash(&bytes))
}

/// Hashes of every regular file below `dir` (relative paths, sorted),
/// excluding manifests.
pub fn tree_hashes(dir: &Path) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).map_err(|e| Error::io(&d, e))? {
            let path = entry.map_err(|e| Error::io(&d, e))?.path();
            if path.is_dir() {
                stack.push(path);
            } else if path.file_name().is_some_and(|n| n != MANIFEST_FILE) {
                let rel = path.strip_prefix(dir).expect("below root").to_string_lossy().replace('\\', "/");
                out.insert(rel, file_hash(&path)?);
            }
        }
    }
    Ok(out)
}

/// Hash of a path: the file hash, or a hash over the sorted tree listing.
pub fn artifact_hash(path: &Path) -> Result<String> {
    if path.is_dir() {
        let listing: String = tree_hashes(path)?.iter().map(|(k, v)| format!("{v} {k}\n")).collect();
        Ok(blob_hash(listing.as_bytes()))
    } else {
        file_hash(path)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    pub manifest_version: u32,
    pub command: String,
    pub tool_version: String,
    pub config: serde_json::Value,
    pub seeds: Vec<u64>,
    /// Input artifact path → content hash.
    pub inputs: BTreeMap<String, String>,
    /// Output file (relative to the directory) → content hash.
    pub outputs: BTreeMap<String, String>,
    pub started_unix: u64,
    pub finished_unix: u64,
}

pub fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

impl RunManifest {
    pub fn new(command: &str, config: serde_json::Value, seeds: Vec<u64>) -> Self {
        Self {
            manifest_version: MANIFEST_VERSION,
            command: command.to_string(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            config,
            seeds,
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
            started_unix: unix_now(),
            finished_unix: 0,
        }
    }

    pub fn add_input(&mut self, path: &Path) -> Result<()> {
        self.inputs.insert(path.display().to_string(), artifact_hash(path)?);
        Ok(())
    }

    /// Hashes the directory's outputs and writes `manifest.json` into it.
    pub fn finish(mut self, dir: &Path) -> Result<PathBuf> {
        self.outputs = tree_hashes(dir)?;
        self.finished_unix = unix_now();
        let path = dir.join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(&self).expect("manifest serialises");
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let m: RunManifest = serde_json::from_str(&text).map_err(|e| Error::Format(format!("manifest: {e}")))?;
        if m.manifest_version != MANIFEST_VERSION {
            return Err(Error::Incompatible {
                expected: format!("manifest version {MANIFEST_VERSION}"),
                found: format!("manifest version {}", m.manifest_version),
            });
        }
        Ok(m)
    }
}
