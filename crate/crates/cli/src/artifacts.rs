//! Output directory ownership, artifact writing and the checksum manifest.

use std::collections::BTreeMap;
use std::fs::{self, OpenOptions};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};
use crate::io::to_json_bytes;

pub const MANIFEST_NAME: &str = "manifest.json";
pub const LOCK_NAME: &str = ".lock";
pub const ERROR_NAME: &str = "error.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub files: Vec<ManifestEntry>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    format!("{:x}", Sha256::digest(bytes))
}

/// Exclusive handle on an output directory. The lock file is removed on drop.
#[derive(Debug)]
pub struct OutputDir {
    root: PathBuf,
    lock: PathBuf,
    written: BTreeMap<String, ManifestEntry>,
}

impl OutputDir {
    pub fn acquire(root: &Path) -> Result<Self> {
        fs::create_dir_all(root).map_err(|e| CliError::io(root, e))?;
        let lock = root.join(LOCK_NAME);
        OpenOptions::new()
            .write(true)
            .create_new(true)
            .open(&lock)
            .map_err(|e| CliError::io(&lock, e))?;
        Ok(Self {
            root: root.to_path_buf(),
            lock,
            written: BTreeMap::new(),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Writes `bytes` to `rel` (forward-slash separated) and records it.
    pub fn write(&mut self, rel: &str, bytes: &[u8]) -> Result<()> {
        let path = self.root.join(rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
        }
        fs::write(&path, bytes).map_err(|e| CliError::io(&path, e))?;
        self.written.insert(
            rel.to_string(),
            ManifestEntry {
                path: rel.to_string(),
                sha256: sha256_hex(bytes),
                bytes: bytes.len() as u64,
            },
        );
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, rel: &str, value: &T) -> Result<()> {
        self.write(rel, &to_json_bytes(value))
    }

    /// Writes the manifest of everything written so far.
    pub fn finish(&mut self) -> Result<Manifest> {
        let manifest = Manifest {
            version: 1,
            files: self.written.values().cloned().collect(),
        };
        let path = self.root.join(MANIFEST_NAME);
        fs::write(&path, to_json_bytes(&manifest)).map_err(|e| CliError::io(&path, e))?;
        Ok(manifest)
    }
}

impl Drop for OutputDir {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.lock);
    }
}

/// Recomputes every checksum in a manifest; returns the paths that differ.
pub fn verify_manifest(root: &Path) -> Result<Vec<String>> {
    let path = root.join(MANIFEST_NAME);
    let bytes = fs::read(&path).map_err(|e| CliError::io(&path, e))?;
    let manifest: Manifest = serde_json::from_slice(&bytes).map_err(|e| CliError::input(&path, e))?;
    let mut bad = Vec::new();
    for entry in manifest.files {
        match fs::read(root.join(&entry.path)) {
            Ok(b) if sha256_hex(&b) == entry.sha256 => {}
            _ => bad.push(entry.path),
        }
    }
    Ok(bad)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn known_digest() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn lock_is_exclusive_and_released() {
        let dir = tempfile::tempdir().unwrap();
        let first = OutputDir::acquire(dir.path()).unwrap();
        assert!(matches!(OutputDir::acquire(dir.path()), Err(CliError::Io { .. })));
        drop(first);
        let mut again = OutputDir::acquire(dir.path()).unwrap();
        again.write("a/b.txt", b"hi").unwrap();
        let m = again.finish().unwrap();
        assert_eq!(m.files.len(), 1);
        assert!(verify_manifest(dir.path()).unwrap().is_empty());
        fs::write(dir.path().join("a/b.txt"), b"changed").unwrap();
        assert_eq!(verify_manifest(dir.path()).unwrap(), vec!["a/b.txt".to_string()]);
    }
}
