//! Cross-system run loop: pick the next system, restore or load data,
//! deploy, watch the slot clock, checkpoint and move on.

mod steps;
mod workflow;

pub use steps::{
    checkpoint_now, guard_seconds, monitor, transfer_and_restore, CheckpointContext, MonitorOutcome, MonitorReport,
};
pub use workflow::{read_status, resume_workflow, run_workflow, RunOptions, StatusSnapshot};

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::backends::BackendError;
use crate::cluster::{ClusterError, ImageError};
use crate::model::{DataVolume, Phase, ValidationReport};
use crate::storage::StorageError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Completed,
    StalledWithCheckpoint,
    Failed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EndedBy {
    Completion,
    TimeslotCheckpoint,
    Failure,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlotRecord {
    pub system_id: String,
    pub slot_duration_used: f64,
    pub progress_delta: u64,
    pub ended_by: EndedBy,
    pub guard_seconds: Option<f64>,
    pub checkpoint_seconds: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

/// A checkpoint as referenced from a run result. The manifest path is
/// relative to the store root.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CheckpointRef {
    pub manifest: PathBuf,
    pub seq: u32,
    pub progress: u64,
    pub digest: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub run_id: String,
    pub outcome: Outcome,
    pub output_volume: Option<DataVolume>,
    pub history: Vec<SlotRecord>,
    pub checkpoint: Option<CheckpointRef>,
    pub final_progress: u64,
    pub work_total: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl RunResult {
    pub fn progress_sum(&self) -> u64 {
        self.history.iter().map(|r| r.progress_delta).sum()
    }
}

#[derive(Debug, thiserror::Error)]
pub enum OrchestratorError {
    #[error("invalid configuration:\n{0}")]
    Invalid(ValidationReport),
    #[error("checkpoint unsupported")]
    CheckpointUnsupported,
    #[error("cannot checkpoint in phase {0:?}")]
    InvalidPhase(Phase),
    #[error("checkpoint corrupt: {0}")]
    CheckpointCorrupt(String),
    #[error("migration failed: digest mismatch, expected {expected}, got {actual}")]
    MigrationFailed { expected: String, actual: String },
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Cluster(#[from] ClusterError),
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error(transparent)]
    Storage(#[from] StorageError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
