mod common;

use bee_core::backends::sim::SimBackend;
use bee_core::backends::{Backend, BackendConfig, BackendKind, BackendSelection, DefaultFactory, Fault, FaultPlan};
use bee_core::cluster::deploy_cluster;
use bee_core::model::{NetworkSolution, Phase, ResourcePool, RunState};
use bee_core::orchestrator::{
    checkpoint_now, guard_seconds, monitor, read_status, resume_workflow, run_workflow, transfer_and_restore,
    CheckpointContext, EndedBy, MonitorOutcome, OrchestratorError, Outcome, RunOptions, RunResult,
};
use bee_core::storage::{digest_hex, Checkpoint, CheckpointStore, Manifest, Volume, MB};
use common::{app, ideal_config, scenario, system, uconf, Scenario};
use proptest::prelude::*;
use sha2::{Digest, Sha256};

const TRAILER: usize = 56;

/// Digest of the application output after `work` units, computed from the
/// hash-chain definition rather than the library's app model.
fn expected_output_digest(input: &[u8], work: u64) -> String {
    let mut state: [u8; 32] = Sha256::new().chain_update(b"bee-app-state").chain_update(input).finalize().into();
    for p in 0..work {
        state = Sha256::new().chain_update(state).chain_update(p.to_le_bytes()).finalize().into();
    }
    let mut out = input.to_vec();
    out.extend_from_slice(&state);
    out.extend_from_slice(&work.to_le_bytes());
    out.extend_from_slice(&(input.len() as u64).to_le_bytes());
    out.extend_from_slice(b"BEEAPPv1");
    digest_hex(&out)
}

fn run(s: &Scenario, store: &std::path::Path, loop_pool: bool) -> RunResult {
    let mut factory = DefaultFactory::new(s.config.clone());
    let mut opts = RunOptions::new(store);
    opts.loop_pool = loop_pool;
    opts.seed = s.config.seed;
    run_workflow(&s.pool, &s.app, &Volume::new("input", s.data.clone()), &s.uconf, &mut factory, &opts).unwrap()
}

fn ideal(pool: Vec<bee_core::model::ComputeSystem>, work: u64) -> Scenario {
    Scenario {
        pool: ResourcePool { systems: pool },
        app: app(1, work),
        uconf: uconf(1, NetworkSolution::P2pTree),
        data: Vec::new(),
        config: ideal_config(),
    }
}

/// Progress per slot on a free-to-deploy system at rate 1: everything
/// between data arrival and the guard point.
fn ideal_slot_progress(time_slot: f64, arrival_s: f64) -> u64 {
    let guard = (0.05 * time_slot).max(2.0 * TRAILER as f64 / MB / 800.0);
    (time_slot - arrival_s - guard).floor() as u64
}

#[test]
fn three_systems_complete_on_the_third() {
    let dir = tempfile::tempdir().unwrap();
    let s = ideal(vec![system("A", 2, 100.0), system("B", 2, 100.0), system("C", 2, 100.0)], 237);
    let res = run(&s, dir.path(), false);

    let xfer = TRAILER as f64 / MB / 1000.0;
    let a = ideal_slot_progress(100.0, 0.0);
    let b = ideal_slot_progress(100.0, xfer);
    assert_eq!((a, b), (95, 94));
    let ids: Vec<_> = res.history.iter().map(|r| r.system_id.as_str()).collect();
    assert_eq!(ids, ["A", "B", "C"]);
    let ended: Vec<_> = res.history.iter().map(|r| r.ended_by).collect();
    assert_eq!(ended, [EndedBy::TimeslotCheckpoint, EndedBy::TimeslotCheckpoint, EndedBy::Completion]);
    let deltas: Vec<_> = res.history.iter().map(|r| r.progress_delta).collect();
    assert_eq!(deltas, [a, b, 237 - a - b]);
    assert_eq!(res.outcome, Outcome::Completed);
    assert_eq!(res.output_volume.unwrap().content_digest, expected_output_digest(b"", 237));
}

#[test]
fn one_slot_app_never_migrates() {
    let dir = tempfile::tempdir().unwrap();
    let s = ideal(vec![system("A", 2, 100.0), system("B", 2, 100.0)], 50);
    let res = run(&s, dir.path(), false);
    assert_eq!(res.history.len(), 1);
    assert_eq!(res.history[0].ended_by, EndedBy::Completion);
    assert_eq!(res.outcome, Outcome::Completed);
    let status = read_status(dir.path(), &res.run_id).unwrap();
    assert!(!status.state.need_migration);
    assert_eq!(status.state.phase, Phase::Complete);
    assert_eq!(status.state.slots_consumed, 1);
}

#[test]
fn exhausted_pool_stalls_with_persisted_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let s = ideal(vec![system("A", 2, 100.0), system("B", 2, 100.0)], 1000);
    let res = run(&s, dir.path(), false);
    assert_eq!(res.outcome, Outcome::StalledWithCheckpoint);
    assert!(res.output_volume.is_none());
    let ck = res.checkpoint.clone().unwrap();
    assert_eq!(ck.progress, 95 + 94);
    assert_eq!(ck.progress, res.progress_sum());
    let on_disk = CheckpointStore::read(dir.path().join(&ck.manifest)).unwrap();
    assert_eq!(on_disk.manifest.progress, ck.progress);
    assert_eq!(on_disk.manifest.origin_system, "B");
    assert_eq!(digest_hex(&on_disk.bytes), ck.digest);
}

#[test]
fn resume_completes_with_uninterrupted_digest() {
    let dir = tempfile::tempdir().unwrap();
    let s = ideal(vec![system("A", 2, 100.0), system("B", 2, 100.0)], 300);
    let stalled = run(&s, dir.path(), false);
    let ck = CheckpointStore::read(dir.path().join(&stalled.checkpoint.unwrap().manifest)).unwrap();

    let mut factory = DefaultFactory::new(s.config.clone());
    let resumed =
        resume_workflow(&s.pool, &s.app, ck.clone(), &s.uconf, &mut factory, &RunOptions::new(dir.path())).unwrap();
    assert_eq!(resumed.outcome, Outcome::Completed);
    assert_eq!(resumed.run_id, stalled.run_id);
    assert_eq!(ck.manifest.progress + resumed.progress_sum(), 300);
    assert_eq!(resumed.output_volume.unwrap().content_digest, expected_output_digest(b"", 300));
}

#[test]
fn resuming_finished_checkpoint_is_immediate() {
    let dir = tempfile::tempdir().unwrap();
    let s = ideal(vec![system("A", 2, 100.0)], 40);
    let bytes = bee_core::backends::app_model::reference_output(b"in", 40);
    let manifest = Manifest {
        run_id: "run-done".into(),
        seq: 3,
        progress: 40,
        digest: digest_hex(&bytes),
        origin_system: "A".into(),
        created_at: 0.0,
    };
    let path = CheckpointStore::open(dir.path()).unwrap().write(&manifest, &bytes).unwrap();
    let ck = CheckpointStore::read(&path).unwrap();
    let mut factory = DefaultFactory::new(s.config.clone());
    let res = resume_workflow(&s.pool, &s.app, ck, &s.uconf, &mut factory, &RunOptions::new(dir.path())).unwrap();
    assert_eq!(res.outcome, Outcome::Completed);
    assert!(res.history.is_empty());
    assert_eq!(res.output_volume.unwrap().content_digest, digest_hex(&bytes));
}

#[test]
fn invalid_config_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let s = ideal(Vec::new(), 10);
    let mut factory = DefaultFactory::new(s.config.clone());
    let err =
        run_workflow(&s.pool, &s.app, &Volume::new("in", vec![]), &s.uconf, &mut factory, &RunOptions::new(dir.path()))
            .unwrap_err();
    assert!(matches!(err, OrchestratorError::Invalid(_)));
}

#[test]
fn deploy_failure_moves_to_next_system() {
    let dir = tempfile::tempdir().unwrap();
    let mut s = ideal(vec![system("A", 2, 100.0), system("B", 2, 100.0)], 50);
    s.config.faults.insert(
        "A".into(),
        FaultPlan { faults: vec![Fault::FailAction { action: "start_vm".into(), host: Some("A-h0".into()) }] },
    );
    let res = run(&s, dir.path(), false);
    assert_eq!(res.history[0].ended_by, EndedBy::Failure);
    assert_eq!(res.history[0].progress_delta, 0);
    assert!(res.history[0].note.as_deref().unwrap().contains("stage 2 failed on host A-h0"));
    assert_eq!(res.history[1].system_id, "B");
    assert_eq!(res.outcome, Outcome::Completed);
}

#[test]
fn node_failure_loses_slot_progress_only() {
    let dir = tempfile::tempdir().unwrap();
    let mut s = ideal(vec![system("A", 2, 100.0), system("B", 2, 100.0), system("C", 2, 100.0)], 150);
    s.config.faults.insert("B".into(), FaultPlan { faults: vec![Fault::NodeFailure { node: 0, after: 30.0 }] });
    let res = run(&s, dir.path(), false);
    let ended: Vec<_> = res.history.iter().map(|r| r.ended_by).collect();
    assert_eq!(ended, [EndedBy::TimeslotCheckpoint, EndedBy::Failure, EndedBy::Completion]);
    assert_eq!(res.progress_sum(), 150);
    assert_eq!(res.output_volume.unwrap().content_digest, expected_output_digest(b"", 150));
}

#[test]
fn checkpoint_write_failure_fails_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let mut s = ideal(vec![system("A", 2, 100.0), system("B", 2, 100.0)], 150);
    s.config.faults.insert("A".into(), FaultPlan { faults: vec![Fault::CheckpointWriteFailure] });
    let res = run(&s, dir.path(), false);
    assert_eq!(res.outcome, Outcome::Failed);
    assert_eq!(res.history.len(), 1);
    assert!(res.error.is_some());
}

#[test]
fn non_checkpointable_app_fails_at_guard() {
    let dir = tempfile::tempdir().unwrap();
    let mut s = ideal(vec![system("A", 2, 100.0), system("B", 2, 100.0)], 150);
    s.app.checkpointable = false;
    let res = run(&s, dir.path(), false);
    assert_eq!(res.outcome, Outcome::Failed);
    assert_eq!(res.history[0].ended_by, EndedBy::Failure);
    assert_eq!(res.error.as_deref(), Some("checkpoint unsupported"));
}

#[test]
fn loop_pool_reuses_systems() {
    let dir = tempfile::tempdir().unwrap();
    let s = ideal(vec![system("A", 2, 100.0), system("B", 2, 100.0)], 400);
    let res = run(&s, dir.path(), true);
    assert_eq!(res.outcome, Outcome::Completed);
    let ids: Vec<_> = res.history.iter().map(|r| r.system_id.as_str()).collect();
    assert_eq!(ids, ["A", "B", "A", "B", "A"]);
    assert_eq!(res.progress_sum(), 400);
}

#[test]
fn loop_pool_stops_when_no_pass_progresses() {
    let dir = tempfile::tempdir().unwrap();
    let mut s = ideal(vec![system("A", 2, 100.0)], 400);
    s.config
        .faults
        .insert("A".into(), FaultPlan { faults: vec![Fault::FailAction { action: "start_app".into(), host: None }] });
    let res = run(&s, dir.path(), true);
    assert_eq!(res.outcome, Outcome::StalledWithCheckpoint);
    assert_eq!(res.history.len(), 1);
    assert_eq!(res.checkpoint.unwrap().progress, 0);
}

// Monitor, checkpoint and transfer against a bare simulated cluster.

fn bare(work: u64, faults: FaultPlan) -> (SimBackend, bee_core::cluster::ClusterState, bee_core::model::AppSpec) {
    let cfg = ideal_config();
    let sys = system("A", 2, 100.0);
    let mut b = SimBackend::new(BackendKind::SimHpc, sys.clone(), &cfg, faults);
    b.put_volume(b"data").unwrap();
    let a = app(1, work);
    let c = deploy_cluster(&sys.hosts, &a, "c", &uconf(1, NetworkSolution::P2pTree), &mut b).unwrap();
    (b, c, a)
}

#[test]
fn monitor_completes_before_guard() {
    let (mut b, c, _) = bare(30, FaultPlan::default());
    let r = monitor(&c, &mut b, 30, 100.0, 10.0, 1.0);
    assert_eq!(r.outcome, MonitorOutcome::Completed);
    assert_eq!(r.elapsed, 30.0);
    assert_eq!(r.progress, 30);
}

#[test]
fn monitor_guard_fires_at_budget_minus_guard() {
    let (mut b, c, _) = bare(200, FaultPlan::default());
    let r = monitor(&c, &mut b, 200, 100.0, 10.0, 1.0);
    assert_eq!(r.outcome, MonitorOutcome::GuardFired);
    assert_eq!(r.elapsed, 90.0);
    let (mut b, c, _) = bare(200, FaultPlan::default());
    let r = monitor(&c, &mut b, 200, 100.0, 10.0, 7.0);
    assert_eq!(r.elapsed, 90.0);
}

#[test]
fn monitor_reports_node_failure() {
    let (mut b, c, _) = bare(200, FaultPlan { faults: vec![Fault::NodeFailure { node: 1, after: 50.0 }] });
    let r = monitor(&c, &mut b, 200, 100.0, 10.0, 1.0);
    assert!(matches!(r.outcome, MonitorOutcome::Failed { .. }));
    assert_eq!(r.elapsed, 50.0);
}

fn ctx(seq: u32) -> CheckpointContext {
    CheckpointContext { run_id: "run-x".into(), seq, created_at: 0.0 }
}

#[test]
fn checkpoint_reflects_current_progress() {
    let dir = tempfile::tempdir().unwrap();
    let store = CheckpointStore::open(dir.path()).unwrap();
    let (mut b, mut c, a) = bare(250, FaultPlan::default());
    b.wait(100.0);
    let mut st = RunState { phase: Phase::Running, ..RunState::default() };
    let (ck, _) = checkpoint_now(&mut st, &a, &mut c, &mut b, &store, &ctx(0)).unwrap();
    assert_eq!(ck.manifest.progress, 100);
    assert_eq!(ck.manifest.digest, expected_output_digest(b"data", 100));
    assert!(st.need_migration);
    assert_eq!(st.last_host_system.as_deref(), Some("A"));

    let (ck2, _) = checkpoint_now(&mut st, &a, &mut c, &mut b, &store, &ctx(1)).unwrap();
    assert_eq!(ck2.manifest.digest, ck.manifest.digest);
}

#[test]
fn checkpoint_preconditions() {
    let dir = tempfile::tempdir().unwrap();
    let store = CheckpointStore::open(dir.path()).unwrap();
    let (mut b, mut c, mut a) = bare(250, FaultPlan::default());
    let mut st = RunState { phase: Phase::Deploying, ..RunState::default() };
    assert!(matches!(
        checkpoint_now(&mut st, &a, &mut c, &mut b, &store, &ctx(0)),
        Err(OrchestratorError::InvalidPhase(Phase::Deploying))
    ));
    a.checkpointable = false;
    st.phase = Phase::Running;
    let err = checkpoint_now(&mut st, &a, &mut c, &mut b, &store, &ctx(0)).unwrap_err();
    assert_eq!(err.to_string(), "checkpoint unsupported");
}

fn ckpt(bytes: Vec<u8>) -> Checkpoint {
    let manifest = Manifest {
        run_id: "r".into(),
        seq: 0,
        progress: 0,
        digest: digest_hex(&bytes),
        origin_system: "A".into(),
        created_at: 0.0,
    };
    Checkpoint { manifest, manifest_path: "r/0/manifest.json".into(), bytes }
}

fn receiver(net_bw: f64, faults: FaultPlan) -> SimBackend {
    let mut sys = system("B", 1, 100.0);
    sys.net_bandwidth_native = net_bw;
    SimBackend::new(BackendKind::SimHpc, sys, &BackendConfig::default(), faults)
}

#[test]
fn transfer_charged_at_slower_link() {
    let mut from = system("A", 1, 100.0);
    from.net_bandwidth_native = 100.0;
    let mut b = receiver(200.0, FaultPlan::default());
    let size = 64usize << 20;
    let (bytes, vol) = transfer_and_restore(&ckpt(vec![7; size]), Some(&from), &mut b).unwrap();
    assert_eq!(bytes.len(), size);
    assert_eq!(vol.location, "B");
    assert!((b.now() - 64.0 / 100.0).abs() < 1e-12);
}

#[test]
fn empty_transfer_is_instant() {
    let mut b = receiver(200.0, FaultPlan::default());
    let (_, vol) = transfer_and_restore(&ckpt(Vec::new()), None, &mut b).unwrap();
    assert_eq!(b.now(), 0.0);
    assert_eq!(vol.content_digest, digest_hex(b""));
    assert_eq!(vol.byte_size, 0);
}

#[test]
fn corrupted_transfer_retried_once() {
    let mut b = receiver(200.0, FaultPlan { faults: vec![Fault::CorruptTransfer { times: 1 }] });
    assert!(transfer_and_restore(&ckpt(vec![1, 2, 3]), None, &mut b).is_ok());
    let mut b = receiver(200.0, FaultPlan { faults: vec![Fault::CorruptTransfer { times: 2 }] });
    let err = transfer_and_restore(&ckpt(vec![1, 2, 3]), None, &mut b).unwrap_err();
    assert!(matches!(err, OrchestratorError::MigrationFailed { .. }));
}

#[test]
fn guard_rule() {
    assert_eq!(guard_seconds(0, 0, 100.0, 1000.0), 50.0);
    assert_eq!(guard_seconds(100 << 20, 0, 1.0, 1000.0), 200.0);
    assert_eq!(guard_seconds(50 << 20, 50 << 20, 1.0, 1000.0), 200.0);
}

#[test]
fn local_backend_runs_the_same_scenarios() {
    let dir = tempfile::tempdir().unwrap();
    let mut s = ideal(vec![system("A", 2, 100.0), system("B", 2, 100.0), system("C", 2, 100.0)], 237);
    s.config.backend = BackendSelection::Local;
    s.config.time_scale = 0.002;
    s.data = b"local input".to_vec();
    let res = run(&s, dir.path(), false);
    assert_eq!(res.outcome, Outcome::Completed);
    assert_eq!(res.progress_sum(), 237);
    for r in &res.history {
        assert!(r.slot_duration_used <= 100.0);
    }
    assert_eq!(res.output_volume.unwrap().content_digest, expected_output_digest(b"local input", 237));

    let dir = tempfile::tempdir().unwrap();
    s.app.work_total = 10_000;
    let res = run(&s, dir.path(), false);
    assert_eq!(res.outcome, Outcome::StalledWithCheckpoint);
    assert_eq!(res.history.len(), 3);
    assert_eq!(res.checkpoint.as_ref().unwrap().progress, res.progress_sum());
}

fn check_invariants(s: &Scenario, res: &RunResult) {
    let ids: Vec<_> = res.history.iter().map(|r| r.system_id.clone()).collect();
    let pool_ids: Vec<_> = s.pool.systems.iter().map(|s| s.id.clone()).collect();
    assert_eq!(ids[..], pool_ids[..ids.len()], "priority order");
    for r in &res.history {
        let sys = s.pool.system(&r.system_id).unwrap();
        assert!(r.slot_duration_used <= sys.time_slot, "{r:?} exceeds slot {}", sys.time_slot);
        if let (Some(c), Some(g)) = (r.checkpoint_seconds, r.guard_seconds) {
            assert!(c <= g, "checkpoint {c}s outside guard {g}s");
        }
    }
    match res.outcome {
        Outcome::Completed => {
            assert_eq!(res.progress_sum(), s.app.work_total);
            assert_eq!(
                res.output_volume.as_ref().unwrap().content_digest,
                expected_output_digest(&s.data, s.app.work_total)
            );
        }
        Outcome::StalledWithCheckpoint => {
            assert!(res.progress_sum() < s.app.work_total);
            assert_eq!(res.checkpoint.as_ref().unwrap().progress, res.progress_sum());
        }
        Outcome::Failed => panic!("unexpected failure: {:?}", res.error),
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 24, ..ProptestConfig::default() })]

    #[test]
    fn random_runs_conserve_work_and_respect_slots(seed in 0u64..1_000_000) {
        let s = scenario(seed);
        let dir = tempfile::tempdir().unwrap();
        let res = run(&s, dir.path(), false);
        check_invariants(&s, &res);
        let status = read_status(dir.path(), &res.run_id).unwrap();
        prop_assert_eq!(status.state.slots_consumed as usize, res.history.len());

        if res.outcome == Outcome::StalledWithCheckpoint {
            let ck = CheckpointStore::read(dir.path().join(&res.checkpoint.unwrap().manifest)).unwrap();
            let start = ck.manifest.progress;
            let mut factory = DefaultFactory::new(s.config.clone());
            let mut opts = RunOptions::new(dir.path());
            opts.loop_pool = true;
            let resumed = resume_workflow(&s.pool, &s.app, ck, &s.uconf, &mut factory, &opts).unwrap();
            prop_assert_eq!(resumed.outcome, Outcome::Completed);
            prop_assert_eq!(start + resumed.progress_sum(), s.app.work_total);
            prop_assert_eq!(
                resumed.output_volume.unwrap().content_digest,
                expected_output_digest(&s.data, s.app.work_total)
            );
        }
    }

    #[test]
    fn equal_seeds_give_equal_results(seed in 0u64..1_000_000) {
        let s = scenario(seed);
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        let a = serde_json::to_string(&run(&s, d1.path(), false)).unwrap();
        let b = serde_json::to_string(&run(&s, d2.path(), false)).unwrap();
        prop_assert_eq!(a, b);
    }
}
