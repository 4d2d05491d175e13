//! `bee` command line: config validation, workflow runs and resumes, run
//! status, and the topology, storage and scaling studies.
//!
//! Exit codes: 0 completed (or success), 1 failed, 2 stalled with a
//! checkpoint, 64 configuration error.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::net::IpAddr;
use std::path::{Path, PathBuf};

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::Serialize;

use bee_core::backends::{
    replay_scaling, BackendConfig, BackendKind, BackendSelection, DefaultFactory, PerfProfile, ScalingParams,
    ScalingRow,
};
use bee_core::model::{validate, AppSpec, CommPattern, HardwareConfig, ResourcePool};
use bee_core::netvirt::agent::{serve_forever, AgentConfig, Role};
use bee_core::netvirt::{all_pairs_trace, cost_of_trace, random_pairs_trace, NodeId, Send, Topology, TopologyKind};
use bee_core::orchestrator::{read_status, resume_workflow, run_workflow, Outcome, RunOptions, RunResult};
use bee_core::storage::{ior_benchmark, CheckpointStore, StorageError, StorageKind, StoragePlan, Volume};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILED: i32 = 1;
pub const EXIT_STALLED: i32 = 2;
pub const EXIT_CONFIG: i32 = 64;

#[derive(Parser, Debug)]
#[command(name = "bee", version, about = "Run containerized applications across a prioritized pool of compute systems")]
pub struct Cli {
    /// Emit machine-readable JSON instead of text.
    #[arg(long, global = true, env = "BEE_JSON")]
    pub json: bool,
    #[command(subcommand)]
    pub cmd: Cmd,
}

#[derive(Args, Debug, Clone)]
pub struct ConfigArgs {
    #[arg(long, env = "BEE_POOL")]
    pub pool: PathBuf,
    #[arg(long, env = "BEE_APP")]
    pub app: PathBuf,
    #[arg(long, env = "BEE_UCONF")]
    pub uconf: PathBuf,
}

#[derive(Args, Debug, Clone)]
pub struct RunArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Checkpoint and volume store (default: ./bee-store, or the
    /// checkpoint's own store on resume).
    #[arg(long, env = "BEE_STORE")]
    pub store: Option<PathBuf>,
    #[arg(long, env = "BEE_SEED", default_value_t = 0)]
    pub seed: u64,
    /// auto, sim-hpc, local, sim-cloud-aws or sim-cloud-baremetal.
    #[arg(long, env = "BEE_BACKEND")]
    pub backend: Option<BackendSelection>,
    /// Re-enqueue systems after their slot instead of using each once.
    #[arg(long, env = "BEE_LOOP_POOL")]
    pub loop_pool: bool,
    /// Input data file (empty input when absent).
    #[arg(long, env = "BEE_DATA")]
    pub data: Option<PathBuf>,
    /// Backend calibration JSON.
    #[arg(long, env = "BEE_SYSTEM_CONFIG")]
    pub system_config: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
pub enum Cmd {
    /// Check pool, app and uconf files.
    Validate(ConfigArgs),
    /// Run a workflow over the pool.
    Run(RunArgs),
    /// Continue a run from a checkpoint manifest (or its directory).
    Resume {
        checkpoint: PathBuf,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Show the persisted state of a run.
    Status {
        #[arg(long, env = "BEE_STORE", default_value = "bee-store")]
        store: PathBuf,
        run_id: String,
    },
    /// Routes and wire cost of a message trace on an overlay.
    Topo(TopoArgs),
    /// Modeled IOR-style throughput per node count.
    Iobench(IoArgs),
    /// Simulated runtime and speedup per process count.
    Scaling(ScalingArgs),
    /// Run one overlay agent (used by the local backend).
    Agent(AgentArgs),
}

#[derive(Args, Debug)]
pub struct TopoArgs {
    #[arg(long)]
    pub kind: String,
    #[arg(long)]
    pub n: usize,
    /// JSON array of {src, dst, bytes}.
    #[arg(long, conflicts_with_all = ["random", "single"])]
    pub trace: Option<PathBuf>,
    /// Random pairs instead of all pairs.
    #[arg(long)]
    pub random: Option<usize>,
    /// One send, given as SRC,DST.
    #[arg(long, value_delimiter = ',')]
    pub single: Option<Vec<NodeId>>,
    #[arg(long, env = "BEE_SEED", default_value_t = 42)]
    pub seed: u64,
    #[arg(long, default_value_t = 1)]
    pub bytes: u64,
}

#[derive(Args, Debug)]
pub struct IoArgs {
    #[arg(long, default_value = "data_image_nfs")]
    pub solution: String,
    #[arg(long, default_value_t = 1000.0)]
    pub native_read: f64,
    #[arg(long, default_value_t = 800.0)]
    pub native_write: f64,
    #[arg(long, default_value_t = bee_core::model::DEFAULT_NFS_CAP)]
    pub nfs_cap: f64,
    #[arg(long, default_value_t = 1)]
    pub min_nodes: usize,
    #[arg(long, default_value_t = 32)]
    pub max_nodes: usize,
    /// Bytes each process writes and then reads.
    #[arg(long, default_value_t = 1 << 30)]
    pub bytes: u64,
}

#[derive(Args, Debug)]
pub struct ScalingArgs {
    /// one_to_one_heavy, all_to_all or mixed=<ratio>.
    #[arg(long, default_value = "one_to_one_heavy")]
    pub pattern: String,
    #[arg(long, value_delimiter = ',', default_value = "multicast,p2p_star,p2p_tree")]
    pub kinds: Vec<String>,
    #[arg(long, value_delimiter = ',', default_value = "1,2,4,8,16,32,64")]
    pub procs: Vec<usize>,
    /// Calibration flavor: sim-hpc, sim-cloud-aws or sim-cloud-baremetal.
    #[arg(long, default_value = "sim-hpc")]
    pub backend: String,
    #[arg(long, default_value_t = 1000.0)]
    pub net_bw: f64,
    #[arg(long, default_value_t = 1.0)]
    pub cpu_rate: f64,
    /// Overrides the backend's default CPU overhead.
    #[arg(long)]
    pub overhead: Option<f64>,
    #[arg(long, default_value_t = 1.0)]
    pub hop_latency_ms: f64,
    #[arg(long, default_value_t = 50)]
    pub rounds: usize,
    #[arg(long, default_value_t = 1 << 20)]
    pub message_bytes: u64,
    #[arg(long, default_value_t = 100_000.0)]
    pub work: f64,
    #[arg(long, env = "BEE_SEED", default_value_t = 42)]
    pub seed: u64,
}

#[derive(Args, Debug)]
pub struct AgentArgs {
    #[arg(long)]
    pub topology: PathBuf,
    #[arg(long, conflicts_with = "hub", required_unless_present = "hub")]
    pub node: Option<NodeId>,
    #[arg(long)]
    pub hub: bool,
    #[arg(long, default_value = "127.0.0.1")]
    pub listen: IpAddr,
}

/// A command failure carrying its exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

impl Failure {
    fn config(message: impl Into<String>) -> Self {
        Self { code: EXIT_CONFIG, message: message.into() }
    }

    fn failed(message: impl Into<String>) -> Self {
        Self { code: EXIT_FAILED, message: message.into() }
    }
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::config(format!("{e:#}"))
    }
}

type CmdResult = Result<i32, Failure>;

/// Parses `args` and runs the command, writing results to `out` and
/// diagnostics to `err`. Returns the exit code.
pub fn run_cli<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            if e.use_stderr() {
                let _ = write!(err, "{e}");
                return EXIT_CONFIG;
            }
            let _ = write!(out, "{e}");
            return EXIT_OK;
        }
    };
    match dispatch(cli, out, err) {
        Ok(code) => code,
        Err(f) => {
            let _ = writeln!(err, "error: {}", f.message);
            f.code
        }
    }
}

fn dispatch(cli: Cli, out: &mut dyn Write, err: &mut dyn Write) -> CmdResult {
    let json = cli.json;
    match cli.cmd {
        Cmd::Validate(c) => cmd_validate(&c, json, out),
        Cmd::Run(r) => cmd_run(&r, json, out, err),
        Cmd::Resume { checkpoint, run } => cmd_resume(&checkpoint, &run, json, out, err),
        Cmd::Status { store, run_id } => cmd_status(&store, &run_id, json, out),
        Cmd::Topo(t) => cmd_topo(&t, json, out),
        Cmd::Iobench(a) => cmd_iobench(&a, json, out),
        Cmd::Scaling(a) => cmd_scaling(&a, json, out),
        Cmd::Agent(a) => cmd_agent(&a),
    }
}

fn load_json<T: DeserializeOwned>(path: &Path, what: &str) -> anyhow::Result<T> {
    let bytes = fs::read(path).with_context(|| format!("reading {what} file {}", path.display()))?;
    serde_json::from_slice(&bytes).with_context(|| format!("parsing {what} file {}", path.display()))
}

fn load_configs(c: &ConfigArgs) -> Result<(ResourcePool, AppSpec, HardwareConfig), Failure> {
    Ok((load_json(&c.pool, "pool")?, load_json(&c.app, "app")?, load_json(&c.uconf, "uconf")?))
}

fn emit<T: Serialize>(out: &mut dyn Write, value: &T) -> Result<(), Failure> {
    let s = serde_json::to_string_pretty(value).map_err(|e| Failure::failed(e.to_string()))?;
    writeln!(out, "{s}").map_err(|e| Failure::failed(e.to_string()))
}

fn w(out: &mut dyn Write, line: std::fmt::Arguments<'_>) -> Result<(), Failure> {
    out.write_fmt(line).and_then(|_| out.write_all(b"\n")).map_err(|e| Failure::failed(e.to_string()))
}

/// The serde name of a unit enum variant.
fn label<T: Serialize>(v: &T) -> String {
    serde_json::to_value(v).ok().and_then(|v| v.as_str().map(str::to_string)).unwrap_or_default()
}

fn cmd_validate(c: &ConfigArgs, json: bool, out: &mut dyn Write) -> CmdResult {
    let (pool, app, uconf) = load_configs(c)?;
    let report = validate(&pool, &app, &uconf);
    if json {
        emit(out, &report)?;
    } else if report.is_ok() {
        w(out, format_args!("ok"))?;
    } else {
        w(out, format_args!("{report}"))?;
    }
    Ok(if report.is_ok() { EXIT_OK } else { EXIT_CONFIG })
}

fn backend_config(r: &RunArgs) -> Result<BackendConfig, Failure> {
    let mut cfg: BackendConfig = match &r.system_config {
        Some(p) => load_json(p, "system config")?,
        None => BackendConfig::default(),
    };
    if let Some(b) = r.backend {
        cfg.backend = b;
    }
    cfg.seed = r.seed;
    if cfg.backend == BackendSelection::Local && cfg.agent_program.is_none() {
        cfg.agent_program = std::env::current_exe().ok();
    }
    Ok(cfg)
}

fn run_options(r: &RunArgs, store: PathBuf) -> RunOptions {
    let mut opts = RunOptions::new(store);
    opts.loop_pool = r.loop_pool;
    opts.seed = r.seed;
    opts
}

fn outcome_code(res: &RunResult) -> i32 {
    match res.outcome {
        Outcome::Completed => EXIT_OK,
        Outcome::StalledWithCheckpoint => EXIT_STALLED,
        Outcome::Failed => EXIT_FAILED,
    }
}

fn render_run(res: &RunResult, store: &Path, json: bool, out: &mut dyn Write, err: &mut dyn Write) -> CmdResult {
    let ckpt_path = res.checkpoint.as_ref().map(|c| store.join(&c.manifest));
    if json {
        emit(out, res)?;
        if let Some(p) = &ckpt_path {
            let _ = writeln!(err, "checkpoint: {}", p.display());
        }
        return Ok(outcome_code(res));
    }
    let outcome = match res.outcome {
        Outcome::Completed => "completed",
        Outcome::StalledWithCheckpoint => "stalled",
        Outcome::Failed => "failed",
    };
    w(out, format_args!("run {}: {outcome}", res.run_id))?;
    w(out, format_args!("{:<4} {:<16} {:>10} {:>10}  {}", "slot", "system", "used_s", "progress", "ended_by"))?;
    for (i, r) in res.history.iter().enumerate() {
        w(
            out,
            format_args!(
                "{:<4} {:<16} {:>10.2} {:>10}  {}",
                i,
                r.system_id,
                r.slot_duration_used,
                r.progress_delta,
                label(&r.ended_by)
            ),
        )?;
        if let Some(n) = &r.note {
            w(out, format_args!("     {n}"))?;
        }
    }
    w(out, format_args!("progress {}/{}", res.final_progress, res.work_total))?;
    if let Some(v) = &res.output_volume {
        w(out, format_args!("output {} ({} bytes)", v.content_digest, v.byte_size))?;
    }
    if let Some(p) = &ckpt_path {
        w(out, format_args!("checkpoint {}", p.display()))?;
    }
    if let Some(e) = &res.error {
        w(out, format_args!("error: {e}"))?;
    }
    Ok(outcome_code(res))
}

fn check_valid(
    pool: &ResourcePool,
    app: &AppSpec,
    uconf: &HardwareConfig,
    json: bool,
    out: &mut dyn Write,
) -> Result<(), Failure> {
    let report = validate(pool, app, uconf);
    if report.is_ok() {
        return Ok(());
    }
    if json {
        emit(out, &report)?;
    }
    Err(Failure::config(format!("invalid configuration:\n{report}")))
}

fn cmd_run(r: &RunArgs, json: bool, out: &mut dyn Write, err: &mut dyn Write) -> CmdResult {
    let (pool, app, uconf) = load_configs(&r.config)?;
    check_valid(&pool, &app, &uconf, json, out)?;
    let cfg = backend_config(r)?;
    let data = match &r.data {
        Some(p) => fs::read(p).with_context(|| format!("reading data file {}", p.display()))?,
        None => Vec::new(),
    };
    let store = r.store.clone().unwrap_or_else(|| PathBuf::from("bee-store"));
    let mut factory = DefaultFactory::new(cfg);
    let res =
        run_workflow(&pool, &app, &Volume::new("input", data), &uconf, &mut factory, &run_options(r, store.clone()))
            .map_err(|e| Failure::failed(e.to_string()))?;
    render_run(&res, &store, json, out, err)
}

fn cmd_resume(checkpoint: &Path, r: &RunArgs, json: bool, out: &mut dyn Write, err: &mut dyn Write) -> CmdResult {
    let (pool, app, uconf) = load_configs(&r.config)?;
    check_valid(&pool, &app, &uconf, json, out)?;
    let ckpt = match CheckpointStore::read(checkpoint) {
        Ok(c) => c,
        Err(e @ StorageError::CheckpointCorrupt { .. }) => return Err(Failure::failed(e.to_string())),
        Err(e) => return Err(Failure::config(format!("reading checkpoint {}: {e}", checkpoint.display()))),
    };
    // <store>/<run_id>/<seq>/manifest.json
    let store = r.store.clone().unwrap_or_else(|| {
        ckpt.manifest_path.ancestors().nth(3).map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from("bee-store"))
    });
    let cfg = backend_config(r)?;
    let mut factory = DefaultFactory::new(cfg);
    let res = resume_workflow(&pool, &app, ckpt, &uconf, &mut factory, &run_options(r, store.clone()))
        .map_err(|e| Failure::failed(e.to_string()))?;
    render_run(&res, &store, json, out, err)
}

fn cmd_status(store: &Path, run_id: &str, json: bool, out: &mut dyn Write) -> CmdResult {
    let snap = read_status(store, run_id).map_err(|e| Failure::config(format!("no status for {run_id}: {e}")))?;
    if json {
        emit(out, &snap)?;
        return Ok(EXIT_OK);
    }
    w(out, format_args!("run {}", snap.run_id))?;
    w(out, format_args!("phase {}", label(&snap.state.phase)))?;
    w(out, format_args!("progress {}/{}", snap.state.progress, snap.work_total))?;
    w(out, format_args!("slots {}", snap.state.slots_consumed))?;
    if let Some(s) = &snap.state.current_system {
        w(out, format_args!("system {s}"))?;
    }
    if snap.state.need_migration {
        w(out, format_args!("migrating from {}", snap.state.last_host_system.as_deref().unwrap_or("?")))?;
    }
    Ok(EXIT_OK)
}

#[derive(Serialize)]
struct TopoReport {
    kind: TopologyKind,
    n: usize,
    edges: Vec<(NodeId, NodeId)>,
    sends: usize,
    cost: bee_core::netvirt::CommCost,
}

fn cmd_topo(a: &TopoArgs, json: bool, out: &mut dyn Write) -> CmdResult {
    let kind: TopologyKind = a.kind.parse().map_err(|e: bee_core::netvirt::NetError| Failure::config(e.to_string()))?;
    let topo = Topology::build(kind, a.n).map_err(|e| Failure::config(e.to_string()))?;
    let trace: Vec<Send> = match (&a.trace, a.random, &a.single) {
        (Some(p), _, _) => load_json(p, "trace")?,
        (None, Some(count), _) => random_pairs_trace(a.n, count, a.seed, a.bytes),
        (None, None, Some(pair)) => match pair[..] {
            [src, dst] => vec![Send { src, dst, bytes: a.bytes }],
            _ => return Err(Failure::config("--single takes SRC,DST")),
        },
        (None, None, None) => all_pairs_trace(a.n, a.bytes),
    };
    let cost = cost_of_trace(&topo, &trace).map_err(|e| Failure::config(format!("bad trace: {e}")))?;
    let report = TopoReport { kind, n: a.n, edges: topo.edges.iter().copied().collect(), sends: trace.len(), cost };
    if json {
        emit(out, &report)?;
        return Ok(EXIT_OK);
    }
    let c = &report.cost;
    w(out, format_args!("{} n={} sends={}", kind, a.n, report.sends))?;
    w(out, format_args!("messages_on_wire {}", c.messages_on_wire))?;
    w(out, format_args!("total_hops {}", c.total_hops))?;
    w(out, format_args!("bytes_on_wire {}", c.bytes_on_wire))?;
    w(out, format_args!("hops  sends"))?;
    for (h, count) in &c.hop_histogram {
        w(out, format_args!("{h:<5} {count}"))?;
    }
    w(out, format_args!("node  relay_load  tx_bytes"))?;
    for (node, load) in &c.per_node_relay_load {
        w(out, format_args!("{node:<5} {load:<11} {}", c.per_node_tx_bytes.get(node).copied().unwrap_or(0)))?;
    }
    Ok(EXIT_OK)
}

fn parse_storage(s: &str) -> Result<StorageKind, Failure> {
    serde_json::from_value(serde_json::Value::String(s.to_string()))
        .map_err(|_| Failure::config(format!("unknown storage solution {s:?}")))
}

fn cmd_iobench(a: &IoArgs, json: bool, out: &mut dyn Write) -> CmdResult {
    let solution = parse_storage(&a.solution)?;
    if a.min_nodes == 0 || a.min_nodes > a.max_nodes {
        return Err(Failure::config("need 1 <= min-nodes <= max-nodes"));
    }
    let mut rows = Vec::new();
    for n in a.min_nodes..=a.max_nodes {
        let plan = StoragePlan {
            solution,
            system_id: "bench".into(),
            nodes: n,
            master_node: Some(0),
            mount_path: "/bee/data".into(),
            native_read: a.native_read,
            native_write: a.native_write,
            nfs_cap: a.nfs_cap,
        };
        rows.push(ior_benchmark(&plan, a.bytes).map_err(|e| Failure::config(e.to_string()))?);
    }
    if json {
        emit(out, &rows)?;
        return Ok(EXIT_OK);
    }
    w(
        out,
        format_args!(
            "{:>5} {:>12} {:>12} {:>12} {:>12} {:>12} {:>12}",
            "nodes", "w_min", "w_agg", "w_workers", "r_min", "r_agg", "r_workers"
        ),
    )?;
    let opt = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.2}"));
    for r in &rows {
        w(
            out,
            format_args!(
                "{:>5} {:>12.2} {:>12.2} {:>12} {:>12.2} {:>12.2} {:>12}",
                r.n_nodes,
                r.write.per_node_min,
                r.write.aggregate,
                opt(r.write.worker_aggregate),
                r.read.per_node_min,
                r.read.aggregate,
                opt(r.read.worker_aggregate)
            ),
        )?;
    }
    Ok(EXIT_OK)
}

fn parse_pattern(s: &str) -> Result<CommPattern, Failure> {
    match s {
        "one_to_one_heavy" => Ok(CommPattern::OneToOneHeavy),
        "all_to_all" => Ok(CommPattern::AllToAll),
        other => match other.strip_prefix("mixed=").and_then(|r| r.parse::<f64>().ok()) {
            Some(ratio) if (0.0..=1.0).contains(&ratio) => Ok(CommPattern::Mixed { ratio }),
            _ => Err(Failure::config(format!("unknown pattern {other:?}"))),
        },
    }
}

fn cmd_scaling(a: &ScalingArgs, json: bool, out: &mut dyn Write) -> CmdResult {
    let pattern = parse_pattern(&a.pattern)?;
    let flavor: BackendKind = a.backend.parse().map_err(Failure::config)?;
    let perf = PerfProfile {
        cpu_rate: a.cpu_rate,
        cpu_overhead_fraction: a.overhead.unwrap_or_else(|| flavor.default_overhead()),
        net_bandwidth: a.net_bw,
        disk_read: 1.0,
        disk_write: 1.0,
        hop_latency_s: a.hop_latency_ms / 1000.0,
    };
    let params =
        ScalingParams { pattern, work_total: a.work, rounds: a.rounds, message_bytes: a.message_bytes, seed: a.seed };
    let mut rows: Vec<ScalingRow> = Vec::new();
    for k in &a.kinds {
        let kind: TopologyKind = k.parse().map_err(|e: bee_core::netvirt::NetError| Failure::config(e.to_string()))?;
        rows.extend(replay_scaling(&params, &perf, kind, &a.procs).map_err(|e| Failure::config(e.to_string()))?);
    }
    if json {
        emit(out, &rows)?;
        return Ok(EXIT_OK);
    }
    w(
        out,
        format_args!(
            "{:<10} {:>6} {:>12} {:>12} {:>12} {:>8}",
            "topology", "procs", "compute_s", "comm_s", "runtime_s", "speedup"
        ),
    )?;
    for r in &rows {
        w(
            out,
            format_args!(
                "{:<10} {:>6} {:>12.3} {:>12.3} {:>12.3} {:>8.3}",
                r.topology.to_string(),
                r.processes,
                r.compute_s,
                r.comm_s,
                r.runtime_s,
                r.speedup
            ),
        )?;
    }
    Ok(EXIT_OK)
}

fn cmd_agent(a: &AgentArgs) -> CmdResult {
    let topology: Topology = load_json(&a.topology, "topology")?;
    let role = match a.node {
        Some(id) => Role::Node(id),
        None => Role::Hub,
    };
    serve_forever(AgentConfig { role, topology, listen_ip: a.listen }).map_err(|e| Failure::failed(e.to_string()))?;
    Ok(EXIT_OK)
}
