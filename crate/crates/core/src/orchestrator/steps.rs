use serde::{Deserialize, Serialize};

use crate::backends::{Backend, BackendError};
use crate::cluster::{self, ClusterState, ClusterStatus};
use crate::model::{AppSpec, ComputeSystem, DataVolume, Phase, RunState};
use crate::storage::{
    attach_volume, digest_hex, model_io, snapshot_volume, Checkpoint, CheckpointStore, IoOp, Manifest, Volume, MB,
};

use super::OrchestratorError;

/// Seconds before slot end at which the run stops to checkpoint: twice the
/// estimated checkpoint write, and never less than 5% of the slot.
pub fn guard_seconds(volume_bytes: u64, write_bytes_per_slot: u64, disk_write_mb_s: f64, time_slot: f64) -> f64 {
    let estimate = (volume_bytes.saturating_add(write_bytes_per_slot)) as f64 / MB / disk_write_mb_s;
    (2.0 * estimate).max(0.05 * time_slot)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum MonitorOutcome {
    Completed,
    GuardFired,
    Failed { error: BackendError },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonitorReport {
    pub outcome: MonitorOutcome,
    /// Seconds since the monitor started.
    pub elapsed: f64,
    pub progress: u64,
}

/// Polls the master every `poll` seconds until the work is done or only
/// `guard` seconds of `budget` remain. The last wait is shortened so the
/// guard point is hit exactly.
pub fn monitor(
    cluster: &ClusterState,
    backend: &mut dyn Backend,
    work_total: u64,
    budget: f64,
    guard: f64,
    poll: f64,
) -> MonitorReport {
    let master = cluster.master().expect("deployed cluster has a master").clone();
    let start = backend.now();
    let deadline = budget - guard;
    let poll = if poll > 0.0 { poll } else { 1.0 };
    loop {
        let elapsed = backend.now() - start;
        let progress = match backend.progress(&master) {
            Ok(p) => p,
            Err(error) => return MonitorReport { outcome: MonitorOutcome::Failed { error }, elapsed, progress: 0 },
        };
        if progress >= work_total {
            return MonitorReport { outcome: MonitorOutcome::Completed, elapsed, progress };
        }
        // Below clock resolution a wait no longer moves time forward.
        if deadline - elapsed <= 1e-9 * deadline.abs().max(1.0) {
            return MonitorReport { outcome: MonitorOutcome::GuardFired, elapsed, progress };
        }
        backend.wait(poll.min(deadline - elapsed));
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointContext {
    pub run_id: String,
    pub seq: u32,
    /// Simulated seconds since the run started.
    pub created_at: f64,
}

/// Pauses the cluster, snapshots its data volume and writes the checkpoint.
/// Returns the checkpoint and the simulated seconds the write took.
pub fn checkpoint_now(
    state: &mut RunState,
    app: &AppSpec,
    cluster: &mut ClusterState,
    backend: &mut dyn Backend,
    store: &CheckpointStore,
    ctx: &CheckpointContext,
) -> Result<(Checkpoint, f64), OrchestratorError> {
    if !matches!(state.phase, Phase::Running | Phase::Checkpointing) {
        return Err(OrchestratorError::InvalidPhase(state.phase));
    }
    if !app.checkpointable {
        return Err(OrchestratorError::CheckpointUnsupported);
    }
    state.phase = Phase::Checkpointing;
    if cluster.status == ClusterStatus::AppRunning {
        cluster::pause(cluster, backend)?;
    }
    let master = cluster.master().expect("deployed cluster has a master").clone();
    let progress = backend.progress(&master)?;
    let bytes = backend.fetch_volume(&master)?;

    let mut volume = Volume::new(format!("{}-data", ctx.run_id), bytes);
    attach_volume(&cluster.storage_plan, &mut volume)?;
    let snap = snapshot_volume(&volume)?;

    let master_idx = cluster.storage_plan.master_node.unwrap_or(0);
    let seconds = model_io(&cluster.storage_plan, master_idx, IoOp::Write, snap.byte_size, 0)?;
    backend.persist_checkpoint(seconds)?;

    let manifest = Manifest {
        run_id: ctx.run_id.clone(),
        seq: ctx.seq,
        progress,
        digest: snap.digest.clone(),
        origin_system: backend.system().id.clone(),
        created_at: ctx.created_at,
    };
    let manifest_path = store.write(&manifest, snap.bytes())?;
    state.progress = progress;
    state.need_migration = true;
    state.last_host_system = Some(backend.system().id.clone());
    Ok((Checkpoint { manifest, manifest_path, bytes: snap.bytes().to_vec() }, seconds))
}

/// Ships a checkpoint to the system behind `backend` and verifies it on
/// arrival. A corrupted copy is fetched once more before giving up.
/// Transfer time is charged at the slower of the two network links.
pub fn transfer_and_restore(
    ckpt: &Checkpoint,
    from: Option<&ComputeSystem>,
    backend: &mut dyn Backend,
) -> Result<(Vec<u8>, DataVolume), OrchestratorError> {
    let to_bw = backend.system().net_bandwidth_native;
    let bw = from.map_or(to_bw, |f| f.net_bandwidth_native.min(to_bw));
    let seconds = ckpt.bytes.len() as f64 / MB / bw;
    let mut actual = String::new();
    for _ in 0..2 {
        let got = backend.receive_transfer(ckpt.bytes.clone(), seconds);
        actual = digest_hex(&got);
        if actual == ckpt.manifest.digest {
            let vol = DataVolume {
                id: format!("{}-data", ckpt.manifest.run_id),
                byte_size: got.len() as u64,
                content_digest: actual,
                location: backend.system().id.clone(),
            };
            return Ok((got, vol));
        }
    }
    Err(OrchestratorError::MigrationFailed { expected: ckpt.manifest.digest.clone(), actual })
}
