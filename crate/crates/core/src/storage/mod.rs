//! Shared storage: the I/O performance model for both storage designs, data
//! volumes with snapshot isolation, and the on-disk checkpoint store.

pub mod checkpoint;
pub mod model;
pub mod volume;

use std::path::PathBuf;

pub use checkpoint::{Checkpoint, CheckpointStore, Manifest};
pub use model::{ior_benchmark, model_io, IoOp, IorPhase, IorRow, StorageKind, StoragePlan, MB};
pub use volume::{attach_volume, detach_volume, digest_hex, snapshot_volume, Snapshot, Volume, VolumeStore};

use crate::netvirt::NodeId;

#[derive(Debug, thiserror::Error)]
pub enum StorageError {
    #[error("node {node} is not part of this {nodes}-node plan")]
    UnknownNode { node: NodeId, nodes: usize },
    #[error("invalid storage plan: {0}")]
    InvalidPlan(String),
    #[error("volume {id} is already attached to {location}")]
    AlreadyAttached { id: String, location: String },
    #[error("volume {id} is not attached to {system}")]
    NotAttached { id: String, system: String },
    #[error("volume {0} is detached")]
    Detached(String),
    #[error("invalid volume id {0:?}")]
    InvalidId(String),
    #[error("digest mismatch on {id}: expected {expected}, got {actual}")]
    DigestMismatch { id: String, expected: String, actual: String },
    #[error("checkpoint corrupt at {}: expected {expected}, got {actual}", path.display())]
    CheckpointCorrupt { path: PathBuf, expected: String, actual: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
