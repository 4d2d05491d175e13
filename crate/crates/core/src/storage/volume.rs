//! Data volumes: an opaque byte blob plus its SHA-256 digest.
//!
//! Volume bytes are shared copy-on-write, so a snapshot is a reference to
//! the bytes at snapshot time and later writes to the live volume never
//! reach it.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::model::{DataVolume, DETACHED};

use super::model::StoragePlan;
use super::StorageError;

pub fn digest_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Volume {
    meta: DataVolume,
    data: Arc<Vec<u8>>,
}

impl Volume {
    pub fn new(id: impl Into<String>, bytes: Vec<u8>) -> Self {
        let meta = DataVolume {
            id: id.into(),
            byte_size: bytes.len() as u64,
            content_digest: digest_hex(&bytes),
            location: DETACHED.to_string(),
        };
        Self { meta, data: Arc::new(bytes) }
    }

    /// Rebuilds a volume from stored metadata, rejecting content that does
    /// not hash to the recorded digest.
    pub fn from_parts(meta: DataVolume, bytes: Vec<u8>) -> Result<Self, StorageError> {
        let actual = digest_hex(&bytes);
        if actual != meta.content_digest || bytes.len() as u64 != meta.byte_size {
            return Err(StorageError::DigestMismatch { id: meta.id, expected: meta.content_digest, actual });
        }
        Ok(Self { meta, data: Arc::new(bytes) })
    }

    pub fn meta(&self) -> &DataVolume {
        &self.meta
    }

    pub fn id(&self) -> &str {
        &self.meta.id
    }

    pub fn bytes(&self) -> &[u8] {
        &self.data
    }

    pub fn digest(&self) -> &str {
        &self.meta.content_digest
    }

    pub fn location(&self) -> &str {
        &self.meta.location
    }

    /// Replaces the content. The digest always follows.
    pub fn write(&mut self, bytes: Vec<u8>) {
        self.data = Arc::new(bytes);
        self.refresh();
    }

    pub fn append(&mut self, extra: &[u8]) {
        Arc::make_mut(&mut self.data).extend_from_slice(extra);
        self.refresh();
    }

    fn refresh(&mut self) {
        self.meta.byte_size = self.data.len() as u64;
        self.meta.content_digest = digest_hex(&self.data);
    }

    pub fn verify(&self) -> bool {
        digest_hex(&self.data) == self.meta.content_digest
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Snapshot {
    pub volume_id: String,
    pub digest: String,
    pub byte_size: u64,
    data: Arc<Vec<u8>>,
}

impl Snapshot {
    pub fn bytes(&self) -> &[u8] {
        &self.data
    }
}

pub fn attach_volume(plan: &StoragePlan, volume: &mut Volume) -> Result<(), StorageError> {
    if !volume.meta.is_detached() {
        return Err(StorageError::AlreadyAttached {
            id: volume.meta.id.clone(),
            location: volume.meta.location.clone(),
        });
    }
    volume.meta.location = plan.system_id.clone();
    Ok(())
}

pub fn detach_volume(plan: &StoragePlan, volume: &mut Volume) -> Result<(), StorageError> {
    if volume.meta.location != plan.system_id {
        return Err(StorageError::NotAttached { id: volume.meta.id.clone(), system: plan.system_id.clone() });
    }
    volume.meta.location = DETACHED.to_string();
    Ok(())
}

pub fn snapshot_volume(volume: &Volume) -> Result<Snapshot, StorageError> {
    if volume.meta.is_detached() {
        return Err(StorageError::Detached(volume.meta.id.clone()));
    }
    Ok(Snapshot {
        volume_id: volume.meta.id.clone(),
        digest: volume.meta.content_digest.clone(),
        byte_size: volume.meta.byte_size,
        data: Arc::clone(&volume.data),
    })
}

/// Persistent volumes under `<root>/volumes/<id>/{meta.json,data.bin}`.
///
/// Operations take `&mut self`, so attach/detach/snapshot on one store are
/// serialized.
#[derive(Debug)]
pub struct VolumeStore {
    root: PathBuf,
}

#[derive(Serialize, Deserialize)]
struct MetaFile {
    #[serde(flatten)]
    meta: DataVolume,
}

impl VolumeStore {
    pub fn open(store_root: impl AsRef<Path>) -> Result<Self, StorageError> {
        let root = store_root.as_ref().join("volumes");
        fs::create_dir_all(&root)?;
        Ok(Self { root })
    }

    fn dir(&self, id: &str) -> Result<PathBuf, StorageError> {
        if id.is_empty() || id.contains(['/', '\\']) || id == "." || id == ".." {
            return Err(StorageError::InvalidId(id.to_string()));
        }
        Ok(self.root.join(id))
    }

    pub fn save(&mut self, volume: &Volume) -> Result<(), StorageError> {
        let dir = self.dir(volume.id())?;
        fs::create_dir_all(&dir)?;
        fs::write(dir.join("data.bin"), volume.bytes())?;
        let meta = serde_json::to_vec_pretty(&MetaFile { meta: volume.meta.clone() })?;
        fs::write(dir.join("meta.json"), meta)?;
        Ok(())
    }

    pub fn load(&self, id: &str) -> Result<Volume, StorageError> {
        let dir = self.dir(id)?;
        let meta: MetaFile = serde_json::from_slice(&fs::read(dir.join("meta.json"))?)?;
        let bytes = fs::read(dir.join("data.bin"))?;
        Volume::from_parts(meta.meta, bytes)
    }

    pub fn attach(&mut self, id: &str, plan: &StoragePlan) -> Result<Volume, StorageError> {
        let mut v = self.load(id)?;
        attach_volume(plan, &mut v)?;
        self.save(&v)?;
        Ok(v)
    }

    pub fn detach(&mut self, id: &str, plan: &StoragePlan) -> Result<Volume, StorageError> {
        let mut v = self.load(id)?;
        detach_volume(plan, &mut v)?;
        self.save(&v)?;
        Ok(v)
    }

    pub fn snapshot(&mut self, id: &str) -> Result<Snapshot, StorageError> {
        snapshot_volume(&self.load(id)?)
    }

    pub fn remove(&mut self, id: &str) -> Result<(), StorageError> {
        let dir = self.dir(id)?;
        if dir.exists() {
            fs::remove_dir_all(dir)?;
        }
        Ok(())
    }
}
