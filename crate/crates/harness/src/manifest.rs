//! Run manifest: config hash, seeds, stage timings and the file inventory.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{HarnessError, Result};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub seconds: f64,
    pub seed: u64,
    pub config_hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileEntry {
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_hash: String,
    pub seed: u64,
    pub versions: BTreeMap<String, String>,
    pub stages: BTreeMap<String, StageRecord>,
    pub files: Vec<FileEntry>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn versions() -> BTreeMap<String, String> {
    BTreeMap::from([
        ("xbar-harness".to_string(), env!("CARGO_PKG_VERSION").to_string()),
        (
            "network-format".to_string(),
            xbar::tensor::NETWORK_FORMAT_VERSION.to_string(),
        ),
        (
            "surrogate-format".to_string(),
            xbar::surrogate::SURROGATE_FORMAT_VERSION.to_string(),
        ),
    ])
}

/// Files under `dir` (sorted, relative), skipping the manifest itself.
fn inventory(dir: &Path) -> Result<Vec<FileEntry>> {
    fn walk(root: &Path, dir: &Path, out: &mut Vec<FileEntry>) -> Result<()> {
        let mut entries: Vec<PathBuf> = std::fs::read_dir(dir)
            .map_err(|e| HarnessError::io(dir, e))?
            .map(|e| e.map(|e| e.path()).map_err(|err| HarnessError::io(dir, err)))
            .collect::<Result<_>>()?;
        entries.sort();
        for p in entries {
            if p.is_dir() {
                walk(root, &p, out)?;
                continue;
            }
            let rel = p.strip_prefix(root).expect("under root").to_string_lossy().replace('\\', "/");
            if rel == MANIFEST_FILE || rel.ends_with(".tmp") {
                continue;
            }
            let bytes = std::fs::read(&p).map_err(|e| HarnessError::io(&p, e))?;
            out.push(FileEntry {
                path: rel,
                bytes: bytes.len() as u64,
                sha256: sha256_hex(&bytes),
            });
        }
        Ok(())
    }
    let mut out = Vec::new();
    walk(dir, dir, &mut out)?;
    Ok(out)
}

/// Writes `bytes` to `path` through a temporary file and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| HarnessError::io(parent, e))?;
    }
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes).map_err(|e| HarnessError::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| HarnessError::io(path, e))
}

pub fn load_manifest(dir: &Path) -> Result<Option<RunManifest>> {
    let path = dir.join(MANIFEST_FILE);
    if !path.exists() {
        return Ok(None);
    }
    let text = std::fs::read_to_string(&path).map_err(|e| HarnessError::io(&path, e))?;
    serde_json::from_str(&text)
        .map(Some)
        .map_err(|e| HarnessError::Report(format!("unreadable manifest {}: {e}", path.display())))
}

/// Records a finished stage and refreshes the inventory of `dir`.
pub fn record_stage(dir: &Path, stage: &str, seconds: f64, seed: u64, config_hash: &str) -> Result<RunManifest> {
    let mut m = load_manifest(dir)?.unwrap_or_else(|| RunManifest {
        config_hash: config_hash.to_string(),
        seed,
        versions: versions(),
        stages: BTreeMap::new(),
        files: Vec::new(),
    });
    m.config_hash = config_hash.to_string();
    m.seed = seed;
    m.versions = versions();
    m.stages.insert(
        stage.to_string(),
        StageRecord {
            seconds,
            seed,
            config_hash: config_hash.to_string(),
        },
    );
    m.files = inventory(dir)?;
    let text = serde_json::to_string_pretty(&m).expect("manifest serializes");
    write_atomic(&dir.join(MANIFEST_FILE), text.as_bytes())?;
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stages_accumulate_and_inventory_hashes_files() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("a.csv"), b"x\n").unwrap();
        record_stage(dir.path(), "train", 1.0, 3, "abc").unwrap();
        std::fs::create_dir(dir.path().join("sub")).unwrap();
        std::fs::write(dir.path().join("sub/b.json"), b"{}").unwrap();
        let m = record_stage(dir.path(), "attack", 2.0, 3, "abc").unwrap();
        assert_eq!(m.stages.len(), 2);
        let paths: Vec<_> = m.files.iter().map(|f| f.path.as_str()).collect();
        assert_eq!(paths, ["a.csv", "sub/b.json"]);
        assert_eq!(m.files[0].sha256, sha256_hex(b"x\n"));
        assert_eq!(load_manifest(dir.path()).unwrap().unwrap(), m);
        assert!(!dir.path().join("manifest.tmp").exists());
    }
}
