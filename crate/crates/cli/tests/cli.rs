use std::fs;
use std::path::{Path, PathBuf};

use bee_cli::{run_cli, EXIT_CONFIG, EXIT_FAILED, EXIT_OK, EXIT_STALLED};
use bee_core::storage::{digest_hex, CheckpointStore, Manifest};
use serde_json::Value;

struct Out {
    code: i32,
    stdout: String,
    stderr: String,
}

fn bee(args: &[&str]) -> Out {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let code = run_cli(std::iter::once("bee").chain(args.iter().copied()), &mut out, &mut err);
    Out { code, stdout: String::from_utf8(out).unwrap(), stderr: String::from_utf8(err).unwrap() }
}

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn cfg(name: &str) -> String {
    configs().join(name).display().to_string()
}

/// Writes an app file with a given amount of work next to the sample pool.
fn app_with_work(dir: &Path, work: u64) -> String {
    let mut app: Value = serde_json::from_slice(&fs::read(configs().join("app.json")).unwrap()).unwrap();
    app["work_total"] = work.into();
    let p = dir.join(format!("app-{work}.json"));
    fs::write(&p, serde_json::to_vec(&app).unwrap()).unwrap();
    p.display().to_string()
}

fn run_json(app: &str, store: &Path, extra: &[&str]) -> (i32, Value, String) {
    let store = store.display().to_string();
    let pool = cfg("pool.json");
    let uconf = cfg("uconf.json");
    let mut args = vec!["--json", "run", "--pool", &pool, "--app", app, "--uconf", &uconf, "--store", &store];
    args.extend_from_slice(extra);
    let o = bee(&args);
    let v = serde_json::from_str(&o.stdout).unwrap_or(Value::Null);
    (o.code, v, o.stderr)
}

fn checkpoint_path(stderr: &str) -> String {
    stderr.lines().find_map(|l| l.strip_prefix("checkpoint: ")).expect("checkpoint path").to_string()
}

#[test]
fn one_slot_run_completes() {
    let dir = tempfile::tempdir().unwrap();
    let app = app_with_work(dir.path(), 100);
    let (code, v, _) = run_json(&app, dir.path(), &[]);
    assert_eq!(code, EXIT_OK);
    assert_eq!(v["outcome"], "completed");
    assert_eq!(v["history"].as_array().unwrap().len(), 1);
    assert_eq!(v["final_progress"], 100);
}

#[test]
fn text_output_lists_slots() {
    let dir = tempfile::tempdir().unwrap();
    let o = bee(&[
        "run",
        "--pool",
        &cfg("pool.json"),
        "--app",
        &cfg("app.json"),
        "--uconf",
        &cfg("uconf.json"),
        "--store",
        &dir.path().display().to_string(),
    ]);
    assert_eq!(o.code, EXIT_OK, "{}", o.stderr);
    assert!(o.stdout.lines().next().unwrap().ends_with(": completed"));
    assert!(o.stdout.contains("progress 6000/6000"));
    assert!(o.stdout.contains("hpc-a"));
}

#[test]
fn stall_then_resume_matches_uninterrupted_run() {
    let dir = tempfile::tempdir().unwrap();
    let app = app_with_work(dir.path(), 60_000);
    let (code, stalled, stderr) = run_json(&app, &dir.path().join("s1"), &[]);
    assert_eq!(code, EXIT_STALLED);
    assert_eq!(stalled["outcome"], "stalled_with_checkpoint");
    let ckpt = checkpoint_path(&stderr);
    assert!(Path::new(&ckpt).exists());

    let pool = cfg("pool.json");
    let uconf = cfg("uconf.json");
    let o = bee(&["--json", "resume", &ckpt, "--pool", &pool, "--app", &app, "--uconf", &uconf, "--loop-pool"]);
    assert_eq!(o.code, EXIT_OK, "{}", o.stderr);
    let resumed: Value = serde_json::from_str(&o.stdout).unwrap();

    let (code, whole, _) = run_json(&app, &dir.path().join("s2"), &["--loop-pool"]);
    assert_eq!(code, EXIT_OK);
    assert_eq!(resumed["output_volume"]["content_digest"], whole["output_volume"]["content_digest"]);
    assert_eq!(resumed["final_progress"], 60_000);

    // A checkpoint holding the finished state resumes without any slots.
    let bytes = bee_core::backends::app_model::reference_output(b"", 60_000);
    let store = CheckpointStore::open(dir.path().join("s3")).unwrap();
    let m = Manifest {
        run_id: "done".into(),
        seq: 1,
        progress: 60_000,
        digest: digest_hex(&bytes),
        origin_system: "hpc-a".into(),
        created_at: 0.0,
    };
    let done = store.write(&m, &bytes).unwrap().display().to_string();
    let o = bee(&["--json", "resume", &done, "--pool", &pool, "--app", &app, "--uconf", &uconf]);
    assert_eq!(o.code, EXIT_OK, "{}", o.stderr);
    let v: Value = serde_json::from_str(&o.stdout).unwrap();
    assert!(v["history"].as_array().unwrap().is_empty());
    assert_eq!(v["output_volume"]["content_digest"], whole["output_volume"]["content_digest"]);
}

#[test]
fn tampered_checkpoint_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let app = app_with_work(dir.path(), 60_000);
    let (_, _, stderr) = run_json(&app, dir.path(), &[]);
    let ckpt = checkpoint_path(&stderr);
    fs::write(Path::new(&ckpt).with_file_name("volume.bin"), b"tampered").unwrap();
    let o = bee(&["resume", &ckpt, "--pool", &cfg("pool.json"), "--app", &app, "--uconf", &cfg("uconf.json")]);
    assert_eq!(o.code, EXIT_FAILED);
    assert!(o.stderr.contains("checkpoint corrupt"), "{}", o.stderr);
}

#[test]
fn config_errors_exit_64() {
    let o = bee(&["run", "--pool", "/nonexistent/pool.json", "--app", &cfg("app.json"), "--uconf", &cfg("uconf.json")]);
    assert_eq!(o.code, EXIT_CONFIG);
    assert!(o.stderr.contains("pool"));

    let dir = tempfile::tempdir().unwrap();
    let mut u: Value = serde_json::from_slice(&fs::read(configs().join("uconf.json")).unwrap()).unwrap();
    u["vcpus"] = 0.into();
    let bad = dir.path().join("u.json");
    fs::write(&bad, serde_json::to_vec(&u).unwrap()).unwrap();
    let bad = bad.display().to_string();
    let o = bee(&["validate", "--pool", &cfg("pool.json"), "--app", &cfg("app.json"), "--uconf", &bad]);
    assert_eq!(o.code, EXIT_CONFIG);

    assert_eq!(bee(&["run", "--bogus"]).code, EXIT_CONFIG);
    assert_eq!(bee(&["--help"]).code, EXIT_OK);
}

#[test]
fn validate_sample_configs() {
    let o = bee(&["validate", "--pool", &cfg("pool.json"), "--app", &cfg("app.json"), "--uconf", &cfg("uconf.json")]);
    assert_eq!(o.code, EXIT_OK);
    assert_eq!(o.stdout.trim(), "ok");
}

#[test]
fn status_after_run() {
    let dir = tempfile::tempdir().unwrap();
    let app = app_with_work(dir.path(), 100);
    let (_, v, _) = run_json(&app, dir.path(), &[]);
    let id = v["run_id"].as_str().unwrap();
    let o = bee(&["status", "--store", &dir.path().display().to_string(), id]);
    assert_eq!(o.code, EXIT_OK, "{}", o.stderr);
    assert!(o.stdout.contains("phase complete"), "{}", o.stdout);
}

#[test]
fn same_seed_same_json() {
    let dir = tempfile::tempdir().unwrap();
    let app = app_with_work(dir.path(), 20_000);
    let (_, a, _) = run_json(&app, &dir.path().join("a"), &["--seed", "5"]);
    let (_, b, _) = run_json(&app, &dir.path().join("b"), &["--seed", "5"]);
    assert_eq!(a, b);
}

#[test]
fn iobench_nfs_band() {
    let o = bee(&["--json", "iobench", "--min-nodes", "2", "--max-nodes", "32"]);
    assert_eq!(o.code, EXIT_OK);
    let rows: Value = serde_json::from_str(&o.stdout).unwrap();
    for r in rows.as_array().unwrap() {
        for phase in ["write", "read"] {
            let agg = r[phase]["worker_aggregate"].as_f64().unwrap();
            assert!((120.0..=130.0).contains(&agg), "{r}");
        }
    }
}

#[test]
fn topo_reports() {
    let o = bee(&["--json", "topo", "--kind", "p2p_star", "--n", "8"]);
    assert_eq!(o.code, EXIT_OK, "{}", o.stderr);
    let v: Value = serde_json::from_str(&o.stdout).unwrap();
    // All 56 ordered pairs; the 42 leaf-to-leaf sends each relay through the center.
    assert_eq!(v["sends"], 56);
    assert_eq!(v["cost"]["per_node_relay_load"]["0"], 42);

    let o = bee(&["--json", "topo", "--kind", "multicast", "--n", "8", "--single", "0,3"]);
    let v: Value = serde_json::from_str(&o.stdout).unwrap();
    assert_eq!(v["cost"]["messages_on_wire"], 7);

    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("t.json");
    fs::write(&bad, r#"[{"src": 0, "dst": 99, "bytes": 1}]"#).unwrap();
    let o = bee(&["topo", "--kind", "p2p_tree", "--n", "4", "--trace", &bad.display().to_string()]);
    assert_eq!(o.code, EXIT_CONFIG);
    fs::write(&bad, "not json").unwrap();
    let o = bee(&["topo", "--kind", "p2p_tree", "--n", "4", "--trace", &bad.display().to_string()]);
    assert_eq!(o.code, EXIT_CONFIG);
}

#[test]
fn scaling_table() {
    let o = bee(&["--json", "scaling", "--procs", "1,64", "--rounds", "5"]);
    assert_eq!(o.code, EXIT_OK, "{}", o.stderr);
    let rows: Value = serde_json::from_str(&o.stdout).unwrap();
    assert_eq!(rows.as_array().unwrap().len(), 6);
    assert_eq!(bee(&["scaling", "--procs", "3"]).code, EXIT_CONFIG);
    assert_eq!(bee(&["scaling", "--pattern", "mixed=2"]).code, EXIT_CONFIG);
}
