//! Checkpoint store: `<store>/<run_id>/<seq>/{manifest.json,volume.bin}`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::volume::digest_hex;
use super::StorageError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub run_id: String,
    pub seq: u32,
    pub progress: u64,
    pub digest: String,
    pub origin_system: String,
    /// Simulated seconds since the run started.
    pub created_at: f64,
}

/// A checkpoint read back from disk with its bytes verified.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub manifest: Manifest,
    pub manifest_path: PathBuf,
    pub bytes: Vec<u8>,
}

impl Checkpoint {
    pub fn byte_size(&self) -> u64 {
        self.bytes.len() as u64
    }
}

#[derive(Debug, Clone)]
pub struct CheckpointStore {
    root: PathBuf,
}

impl CheckpointStore {
    pub fn open(root: impl AsRef<Path>) -> Result<Self, StorageError> {
        let root = root.as_ref().to_path_buf();
        fs::create_dir_all(&root)?;
        Ok(Self { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn run_dir(&self, run_id: &str) -> PathBuf {
        self.root.join(run_id)
    }

    pub fn write(&self, manifest: &Manifest, bytes: &[u8]) -> Result<PathBuf, StorageError> {
        if digest_hex(bytes) != manifest.digest {
            return Err(StorageError::DigestMismatch {
                id: format!("{}/{}", manifest.run_id, manifest.seq),
                expected: manifest.digest.clone(),
                actual: digest_hex(bytes),
            });
        }
        let dir = self.run_dir(&manifest.run_id).join(manifest.seq.to_string());
        fs::create_dir_all(&dir)?;
        fs::write(dir.join("volume.bin"), bytes)?;
        let path = dir.join("manifest.json");
        fs::write(&path, serde_json::to_vec_pretty(manifest)?)?;
        Ok(path)
    }

    /// Reads a checkpoint given its manifest path or its directory.
    pub fn read(path: impl AsRef<Path>) -> Result<Checkpoint, StorageError> {
        let path = path.as_ref();
        let manifest_path = if path.is_dir() { path.join("manifest.json") } else { path.to_path_buf() };
        let dir = manifest_path.parent().unwrap_or(Path::new("."));
        let manifest: Manifest = serde_json::from_slice(&fs::read(&manifest_path)?)?;
        let bytes = fs::read(dir.join("volume.bin"))?;
        let actual = digest_hex(&bytes);
        if actual != manifest.digest {
            return Err(StorageError::CheckpointCorrupt { path: manifest_path, expected: manifest.digest, actual });
        }
        Ok(Checkpoint { manifest, manifest_path, bytes })
    }

    /// Highest sequence number written for `run_id`.
    pub fn latest(&self, run_id: &str) -> Result<Option<Checkpoint>, StorageError> {
        let dir = self.run_dir(run_id);
        if !dir.exists() {
            return Ok(None);
        }
        let mut best: Option<u32> = None;
        for entry in fs::read_dir(&dir)? {
            let entry = entry?;
            if let Some(seq) = entry.file_name().to_str().and_then(|s| s.parse::<u32>().ok()) {
                if entry.path().join("manifest.json").exists() {
                    best = best.max(Some(seq));
                }
            }
        }
        best.map(|seq| Self::read(dir.join(seq.to_string()))).transpose()
    }
}
