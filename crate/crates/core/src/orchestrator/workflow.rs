use std::collections::VecDeque;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::backends::app_model::image_len;
use crate::backends::{Backend, BackendFactory};
use crate::cluster::{self, build_image, ClusterState, ClusterStatus, DeployOptions, ImageRecipe};
use crate::model::{validate, AppSpec, ComputeSystem, DataVolume, HardwareConfig, Phase, ResourcePool, RunState};
use crate::storage::{attach_volume, Checkpoint, CheckpointStore, Manifest, Volume, VolumeStore, MB};

use super::steps::{checkpoint_now, guard_seconds, monitor, transfer_and_restore, CheckpointContext, MonitorOutcome};
use super::{CheckpointRef, EndedBy, OrchestratorError, Outcome, RunResult, SlotRecord};

#[derive(Debug, Clone, PartialEq)]
pub struct RunOptions {
    pub store_root: PathBuf,
    /// Put each system back at the end of the queue after its slot.
    pub loop_pool: bool,
    /// Simulated seconds between progress polls.
    pub poll_interval: f64,
    pub seed: u64,
    pub run_id: Option<String>,
    /// Upper bound on slots when looping over the pool.
    pub max_slots: usize,
    pub recipe: ImageRecipe,
}

impl RunOptions {
    pub fn new(store_root: impl Into<PathBuf>) -> Self {
        Self {
            store_root: store_root.into(),
            loop_pool: false,
            poll_interval: 1.0,
            seed: 0,
            run_id: None,
            max_slots: 1000,
            recipe: ImageRecipe::default(),
        }
    }
}

/// What `status` reads: the loop's state as of its last transition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatusSnapshot {
    pub run_id: String,
    pub work_total: u64,
    pub state: RunState,
    pub history: Vec<SlotRecord>,
    pub outcome: Option<Outcome>,
}

pub fn read_status(store_root: &Path, run_id: &str) -> Result<StatusSnapshot, OrchestratorError> {
    let bytes = fs::read(store_root.join(run_id).join("state.json"))?;
    serde_json::from_slice(&bytes).map_err(|e| OrchestratorError::Io(e.into()))
}

fn default_run_id(pool: &ResourcePool, app: &AppSpec, data_digest: &str, seed: u64) -> String {
    let mut h = Sha256::new();
    h.update(app.name.as_bytes());
    h.update([0]);
    h.update(data_digest.as_bytes());
    for s in &pool.systems {
        h.update([0]);
        h.update(s.id.as_bytes());
    }
    h.update(app.work_total.to_le_bytes());
    h.update(seed.to_le_bytes());
    format!("run-{}", &hex::encode(h.finalize())[..16])
}

pub fn run_workflow(
    pool: &ResourcePool,
    app: &AppSpec,
    data: &Volume,
    uconf: &HardwareConfig,
    factory: &mut dyn BackendFactory,
    opts: &RunOptions,
) -> Result<RunResult, OrchestratorError> {
    let report = validate(pool, app, uconf);
    if !report.is_ok() {
        return Err(OrchestratorError::Invalid(report));
    }
    let run_id = opts.run_id.clone().unwrap_or_else(|| default_run_id(pool, app, data.digest(), opts.seed));
    Run::new(pool, app, uconf, opts, run_id, data.bytes().to_vec(), None)?.execute(factory)
}

/// Continues a run from a checkpoint written by an earlier invocation.
pub fn resume_workflow(
    pool: &ResourcePool,
    app: &AppSpec,
    ckpt: Checkpoint,
    uconf: &HardwareConfig,
    factory: &mut dyn BackendFactory,
    opts: &RunOptions,
) -> Result<RunResult, OrchestratorError> {
    let report = validate(pool, app, uconf);
    if !report.is_ok() {
        return Err(OrchestratorError::Invalid(report));
    }
    let run_id = opts.run_id.clone().unwrap_or_else(|| ckpt.manifest.run_id.clone());
    Run::new(pool, app, uconf, opts, run_id, ckpt.bytes.clone(), Some(ckpt))?.execute(factory)
}

enum SlotEnd {
    Completed(DataVolume),
    Checkpointed,
    Failed,
    Fatal(String),
}

struct Run<'a> {
    pool: &'a ResourcePool,
    app: &'a AppSpec,
    uconf: &'a HardwareConfig,
    opts: &'a RunOptions,
    run_id: String,
    store: CheckpointStore,
    state: RunState,
    history: Vec<SlotRecord>,
    initial: Vec<u8>,
    latest: Option<Checkpoint>,
    next_seq: u32,
    clock: f64,
    base_image: String,
}

impl<'a> Run<'a> {
    fn new(
        pool: &'a ResourcePool,
        app: &'a AppSpec,
        uconf: &'a HardwareConfig,
        opts: &'a RunOptions,
        run_id: String,
        initial: Vec<u8>,
        restore: Option<Checkpoint>,
    ) -> Result<Self, OrchestratorError> {
        let store = CheckpointStore::open(&opts.store_root)?;
        let mut state = RunState::default();
        let mut next_seq = 0;
        if let Some(ck) = &restore {
            state.need_migration = true;
            state.last_host_system = Some(ck.manifest.origin_system.clone());
            state.progress = ck.manifest.progress;
            next_seq = ck.manifest.seq + 1;
        }
        Ok(Self {
            pool,
            app,
            uconf,
            opts,
            run_id,
            store,
            state,
            history: Vec::new(),
            initial,
            latest: restore,
            next_seq,
            clock: 0.0,
            base_image: String::new(),
        })
    }

    fn execute(mut self, factory: &mut dyn BackendFactory) -> Result<RunResult, OrchestratorError> {
        if self.state.progress >= self.app.work_total {
            // Nothing left to do: the checkpoint already holds the result.
            let vol = self.save_output(Volume::new(format!("{}-output", self.run_id), self.initial.clone()), None)?;
            self.state.phase = Phase::Complete;
            return self.finish(Outcome::Completed, Some(vol), None);
        }

        let builder_sys = self.pool.systems[0].clone();
        let image = factory
            .create(&builder_sys)
            .map_err(OrchestratorError::from)
            .and_then(|mut b| build_image(&self.opts.recipe, b.as_mut()).map_err(OrchestratorError::from));
        match image {
            Ok(img) => self.base_image = img.image_id,
            Err(e) => {
                self.state.phase = Phase::Failed;
                return self.finish(Outcome::Failed, None, Some(format!("image build failed: {e}")));
            }
        }

        let mut queue: VecDeque<usize> = (0..self.pool.systems.len()).collect();
        let pass_len = self.pool.systems.len();
        let mut pass_start_progress = self.state.progress;
        let mut slots_in_pass = 0;
        while let Some(idx) = queue.pop_front() {
            if self.history.len() >= self.opts.max_slots {
                break;
            }
            if self.opts.loop_pool {
                queue.push_back(idx);
            }
            let sys = self.pool.systems[idx].clone();
            match self.slot(&sys, factory) {
                SlotEnd::Completed(vol) => {
                    self.state.phase = Phase::Complete;
                    self.write_status(None)?;
                    return self.finish(Outcome::Completed, Some(vol), None);
                }
                SlotEnd::Fatal(msg) => {
                    self.state.phase = Phase::Failed;
                    return self.finish(Outcome::Failed, None, Some(msg));
                }
                SlotEnd::Checkpointed | SlotEnd::Failed => self.write_status(None)?,
            }
            slots_in_pass += 1;
            if self.opts.loop_pool && slots_in_pass == pass_len {
                if self.state.progress == pass_start_progress {
                    break;
                }
                pass_start_progress = self.state.progress;
                slots_in_pass = 0;
            }
        }
        self.stall()
    }

    /// Pool exhausted with work left: keep the newest checkpoint, or store
    /// the input data if no slot ever checkpointed.
    fn stall(mut self) -> Result<RunResult, OrchestratorError> {
        if self.latest.is_none() {
            let manifest = Manifest {
                run_id: self.run_id.clone(),
                seq: self.next_seq,
                progress: self.state.progress,
                digest: crate::storage::digest_hex(&self.initial),
                origin_system: self.state.last_host_system.clone().unwrap_or_else(|| self.pool.systems[0].id.clone()),
                created_at: self.clock,
            };
            let path = self.store.write(&manifest, &self.initial)?;
            self.next_seq += 1;
            self.latest = Some(Checkpoint { manifest, manifest_path: path, bytes: self.initial.clone() });
        }
        self.state.phase = Phase::Stalled;
        self.finish(Outcome::StalledWithCheckpoint, None, None)
    }

    fn finish(
        self,
        outcome: Outcome,
        output_volume: Option<DataVolume>,
        error: Option<String>,
    ) -> Result<RunResult, OrchestratorError> {
        self.write_status(Some(outcome))?;
        let checkpoint = match outcome {
            Outcome::StalledWithCheckpoint => self.latest.as_ref().map(|ck| CheckpointRef {
                manifest: PathBuf::from(&ck.manifest.run_id).join(ck.manifest.seq.to_string()).join("manifest.json"),
                seq: ck.manifest.seq,
                progress: ck.manifest.progress,
                digest: ck.manifest.digest.clone(),
            }),
            _ => None,
        };
        Ok(RunResult {
            run_id: self.run_id,
            outcome,
            output_volume,
            history: self.history,
            checkpoint,
            final_progress: self.state.progress,
            work_total: self.app.work_total,
            error,
        })
    }

    fn write_status(&self, outcome: Option<Outcome>) -> Result<(), OrchestratorError> {
        let snap = StatusSnapshot {
            run_id: self.run_id.clone(),
            work_total: self.app.work_total,
            state: self.state.clone(),
            history: self.history.clone(),
            outcome,
        };
        let dir = self.store.run_dir(&self.run_id);
        fs::create_dir_all(&dir)?;
        let json = serde_json::to_vec_pretty(&snap).map_err(|e| OrchestratorError::Io(e.into()))?;
        fs::write(dir.join("state.json"), json)?;
        Ok(())
    }

    fn save_output(&self, mut vol: Volume, cluster: Option<&ClusterState>) -> Result<DataVolume, OrchestratorError> {
        if let Some(c) = cluster {
            attach_volume(&c.storage_plan, &mut vol)?;
        }
        VolumeStore::open(&self.opts.store_root)?.save(&vol)?;
        Ok(vol.meta().clone())
    }

    fn record(
        &mut self,
        sys: &ComputeSystem,
        used: f64,
        delta: u64,
        ended_by: EndedBy,
        guard: Option<f64>,
        ckpt: Option<f64>,
        note: Option<String>,
    ) {
        self.history.push(SlotRecord {
            system_id: sys.id.clone(),
            slot_duration_used: used,
            progress_delta: delta,
            ended_by,
            guard_seconds: guard,
            checkpoint_seconds: ckpt,
            note,
        });
        self.state.slots_consumed += 1;
    }

    /// A failed slot: progress since the last checkpoint is lost. Time
    /// spent past the slot end is not billed to the slot.
    fn fail_slot(&mut self, sys: &ComputeSystem, backend: &dyn Backend, t0: f64, guard: Option<f64>, note: String) {
        let used = (backend.now() - t0).min(sys.time_slot);
        self.clock += backend.now() - t0;
        self.record(sys, used, 0, EndedBy::Failure, guard, None, Some(note));
    }

    fn slot(&mut self, sys: &ComputeSystem, factory: &mut dyn BackendFactory) -> SlotEnd {
        self.state.current_system = Some(sys.id.clone());
        let mut backend = match factory.create(sys) {
            Ok(b) => b,
            Err(e) => {
                self.record(sys, 0.0, 0, EndedBy::Failure, None, None, Some(e.to_string()));
                return SlotEnd::Failed;
            }
        };
        let backend = backend.as_mut();
        let t0 = backend.now();
        let slot_start_progress = self.state.progress;

        // Data for this slot: the checkpoint from the last system, or the input.
        let bytes = if self.state.need_migration {
            self.state.phase = Phase::Migrating;
            let ck = self.latest.as_ref().expect("migration has a checkpoint");
            let from = self.state.last_host_system.as_deref().and_then(|id| self.pool.system(id));
            match transfer_and_restore(ck, from, backend) {
                Ok((b, _)) => b,
                Err(e) => {
                    self.fail_slot(sys, backend, t0, None, e.to_string());
                    return SlotEnd::Fatal(e.to_string());
                }
            }
        } else {
            backend.wait(self.initial.len() as f64 / MB / sys.disk_bandwidth_native.write);
            self.initial.clone()
        };
        if let Err(e) = backend.put_volume(&bytes) {
            self.fail_slot(sys, backend, t0, None, e.to_string());
            return SlotEnd::Failed;
        }

        self.state.phase = Phase::Deploying;
        let cname = format!("{}-{}-{}", self.run_id, sys.id, self.history.len());
        let opts = DeployOptions { parallelism: 0, base_image: self.base_image.clone() };
        let mut cluster = match cluster::deploy_cluster_with(&sys.hosts, self.app, &cname, self.uconf, backend, &opts) {
            Ok(c) => c,
            Err(e) => {
                self.fail_slot(sys, backend, t0, None, e.to_string());
                return SlotEnd::Failed;
            }
        };

        self.state.phase = Phase::Running;
        let guard = guard_seconds(
            image_len(&bytes) as u64,
            self.app.io_profile.write_bytes_per_slot,
            sys.disk_bandwidth_native.write,
            sys.time_slot,
        );
        let used = backend.now() - t0;
        if sys.time_slot - used <= guard {
            let _ = cluster::stop(&mut cluster, backend);
            self.fail_slot(sys, backend, t0, Some(guard), "deployment left no time before the guard".into());
            return SlotEnd::Failed;
        }

        let report =
            monitor(&cluster, backend, self.app.work_total, sys.time_slot - used, guard, self.opts.poll_interval);
        match report.outcome {
            MonitorOutcome::Completed => {
                let master = cluster.master().expect("master").clone();
                let out = match backend.fetch_volume(&master) {
                    Ok(b) => b,
                    Err(e) => {
                        let _ = cluster::stop(&mut cluster, backend);
                        self.fail_slot(sys, backend, t0, Some(guard), e.to_string());
                        return SlotEnd::Failed;
                    }
                };
                let saved =
                    self.save_output(Volume::new(format!("{}-output", self.run_id), out.clone()), Some(&cluster));
                let _ = cluster::stop(&mut cluster, backend);
                let vol = match saved {
                    Ok(meta) => meta,
                    Err(e) => {
                        self.fail_slot(sys, backend, t0, Some(guard), e.to_string());
                        return SlotEnd::Fatal(e.to_string());
                    }
                };
                let used = backend.now() - t0;
                self.clock += used;
                self.state.progress = report.progress;
                self.state.need_migration = false;
                self.record(
                    sys,
                    used,
                    report.progress - slot_start_progress,
                    EndedBy::Completion,
                    Some(guard),
                    None,
                    None,
                );
                SlotEnd::Completed(vol)
            }
            MonitorOutcome::GuardFired => {
                let ctx = CheckpointContext {
                    run_id: self.run_id.clone(),
                    seq: self.next_seq,
                    created_at: self.clock + backend.now() - t0,
                };
                let res = checkpoint_now(&mut self.state, self.app, &mut cluster, backend, &self.store, &ctx);
                if cluster.status != ClusterStatus::Stopped {
                    let _ = cluster::stop(&mut cluster, backend);
                }
                match res {
                    Ok((ck, secs)) => {
                        let used = backend.now() - t0;
                        self.clock += used;
                        self.next_seq += 1;
                        let delta = ck.manifest.progress - slot_start_progress;
                        self.latest = Some(ck);
                        self.record(sys, used, delta, EndedBy::TimeslotCheckpoint, Some(guard), Some(secs), None);
                        SlotEnd::Checkpointed
                    }
                    Err(e) => {
                        self.state.progress = slot_start_progress;
                        self.fail_slot(sys, backend, t0, Some(guard), e.to_string());
                        SlotEnd::Fatal(e.to_string())
                    }
                }
            }
            MonitorOutcome::Failed { error } => {
                let _ = cluster::stop(&mut cluster, backend);
                self.fail_slot(sys, backend, t0, Some(guard), error.to_string());
                SlotEnd::Failed
            }
        }
    }
}
