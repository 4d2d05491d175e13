//! Shared domain types: compute systems, the priority pool, the application
//! descriptor, the user hardware configuration, data volumes and run state.
//!
//! Every type here is a plain value. Field names match the JSON files the
//! CLI reads (`pool.json`, `app.json`, `uconf.json`).

use std::collections::BTreeSet;
use std::fmt;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

/// Default NFS re-export ceiling in MB/s.
pub const DEFAULT_NFS_CAP: f64 = 125.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SystemKind {
    Hpc,
    CloudAwsLike,
    CloudBaremetalLike,
}

impl fmt::Display for SystemKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SystemKind::Hpc => "hpc",
            SystemKind::CloudAwsLike => "cloud-aws-like",
            SystemKind::CloudBaremetalLike => "cloud-baremetal-like",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Host {
    pub id: String,
}

impl Host {
    pub fn new(id: impl Into<String>) -> Self {
        Self { id: id.into() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiskBandwidth {
    pub read: f64,
    pub write: f64,
}

/// A schedulable compute system: a set of hosts granted for one time slot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComputeSystem {
    pub id: String,
    pub kind: SystemKind,
    pub hosts: Vec<Host>,
    /// Wall-clock allocation in seconds.
    pub time_slot: f64,
    pub kvm_available: bool,
    pub host_file_sharing: bool,
    /// MB/s (1 MB = 2^20 bytes).
    pub net_bandwidth_native: f64,
    pub disk_bandwidth_native: DiskBandwidth,
    /// Work units per second per core.
    pub cpu_rate_native: f64,
    #[serde(default = "default_nfs_cap")]
    pub nfs_cap: f64,
}

fn default_nfs_cap() -> f64 {
    DEFAULT_NFS_CAP
}

/// Priority-ordered systems; the head is tried first.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ResourcePool {
    pub systems: Vec<ComputeSystem>,
}

impl ResourcePool {
    pub fn system(&self, id: &str) -> Option<&ComputeSystem> {
        self.systems.iter().find(|s| s.id == id)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContainerSource {
    ImageRef(String),
    Buildfile(PathBuf),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CommPattern {
    AllToAll,
    OneToOneHeavy,
    Mixed { ratio: f64 },
}

impl CommPattern {
    /// Fraction of sends that are point-to-point rather than broadcasts.
    pub fn one_to_one_ratio(&self) -> f64 {
        match self {
            CommPattern::AllToAll => 0.0,
            CommPattern::OneToOneHeavy => 0.9,
            CommPattern::Mixed { ratio } => *ratio,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct IoProfile {
    pub read_bytes_per_slot: u64,
    pub write_bytes_per_slot: u64,
}

/// The containerized application to run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AppSpec {
    pub name: String,
    pub container_source: ContainerSource,
    pub entry_command: Vec<String>,
    pub process_count: u32,
    pub comm_pattern: CommPattern,
    pub work_total: u64,
    #[serde(default)]
    pub io_profile: IoProfile,
    pub checkpointable: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NetworkSolution {
    Multicast,
    P2pStar,
    P2pTree,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StorageSolution {
    DataImageNfs,
    VirtioPassthrough,
}

/// User hardware configuration applied to every provisioned node.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HardwareConfig {
    pub vcpus: u32,
    pub ram_mb: u32,
    pub network_solution: NetworkSolution,
    pub storage_solution: StorageSolution,
    pub ssh_base_port: u32,
}

/// Where a volume currently lives.
pub const DETACHED: &str = "detached";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DataVolume {
    pub id: String,
    pub byte_size: u64,
    pub content_digest: String,
    /// A system id or [`DETACHED`].
    pub location: String,
}

impl DataVolume {
    pub fn is_detached(&self) -> bool {
        self.location == DETACHED
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Init,
    Deploying,
    Running,
    Checkpointing,
    Migrating,
    Stalled,
    Complete,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunState {
    pub phase: Phase,
    pub current_system: Option<String>,
    pub last_host_system: Option<String>,
    pub need_migration: bool,
    pub progress: u64,
    pub slots_consumed: u32,
}

impl Default for RunState {
    fn default() -> Self {
        Self {
            phase: Phase::Init,
            current_system: None,
            last_host_system: None,
            need_migration: false,
            progress: 0,
            slots_consumed: 0,
        }
    }
}

/// One rule broken by an input.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub field: String,
    pub rule: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn has_rule(&self, rule: &str) -> bool {
        self.violations.iter().any(|v| v.rule == rule)
    }

    fn push(&mut self, field: impl Into<String>, rule: &str, message: impl Into<String>) {
        self.violations.push(Violation { field: field.into(), rule: rule.to_string(), message: message.into() });
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.violations.is_empty() {
            return f.write_str("ok");
        }
        for v in &self.violations {
            writeln!(f, "{}: [{}] {}", v.field, v.rule, v.message)?;
        }
        Ok(())
    }
}

fn positive(x: f64) -> bool {
    x.is_finite() && x > 0.0
}

/// Checks every type invariant plus placement feasibility. Never fails;
/// problems come back as violations.
pub fn validate(pool: &ResourcePool, app: &AppSpec, uconf: &HardwareConfig) -> ValidationReport {
    let mut report = ValidationReport::default();

    if pool.systems.is_empty() {
        report.push("pool.systems", "pool.systems non-empty", "resource pool has no systems");
    }
    let mut seen = BTreeSet::new();
    for (i, sys) in pool.systems.iter().enumerate() {
        let at = |f: &str| format!("pool.systems[{i}].{f}");
        if !seen.insert(sys.id.as_str()) {
            report.push(at("id"), "system ids unique", format!("duplicate system id {:?}", sys.id));
        }
        if sys.hosts.is_empty() {
            report.push(at("hosts"), "hosts non-empty", format!("system {:?} has no hosts", sys.id));
        }
        let mut host_ids = BTreeSet::new();
        for h in &sys.hosts {
            if !host_ids.insert(h.id.as_str()) {
                report.push(at("hosts"), "host ids unique", format!("duplicate host {:?}", h.id));
            }
        }
        if !positive(sys.time_slot) {
            report.push(at("time_slot"), "time_slot > 0", "time slot must be positive");
        }
        let rates = [
            ("net_bandwidth_native", sys.net_bandwidth_native),
            ("disk_bandwidth_native.read", sys.disk_bandwidth_native.read),
            ("disk_bandwidth_native.write", sys.disk_bandwidth_native.write),
            ("cpu_rate_native", sys.cpu_rate_native),
            ("nfs_cap", sys.nfs_cap),
        ];
        for (name, value) in rates {
            if !positive(value) {
                report.push(at(name), "rate > 0", format!("{name} must be positive, got {value}"));
            }
        }
    }

    if app.name.is_empty() {
        report.push("app.name", "name non-empty", "application name is empty");
    }
    match &app.container_source {
        ContainerSource::ImageRef(r) if r.is_empty() => {
            report.push("app.container_source.image_ref", "source non-empty", "empty image reference")
        }
        ContainerSource::Buildfile(p) if p.as_os_str().is_empty() => {
            report.push("app.container_source.buildfile", "source non-empty", "empty buildfile path")
        }
        _ => {}
    }
    if app.process_count < 1 {
        report.push("app.process_count", "process_count >= 1", "need at least one process");
    }
    if app.work_total == 0 {
        report.push("app.work_total", "work_total > 0", "work_total must be positive");
    }
    if let CommPattern::Mixed { ratio } = app.comm_pattern {
        if !(0.0..=1.0).contains(&ratio) {
            report.push("app.comm_pattern.mixed.ratio", "ratio in [0,1]", format!("ratio {ratio} out of range"));
        }
    }

    if uconf.vcpus < 1 {
        report.push("uconf.vcpus", "vcpus >= 1", "need at least one vCPU");
    }
    if uconf.ram_mb < 1 {
        report.push("uconf.ram_mb", "ram_mb >= 1", "need at least 1 MB of RAM");
    }
    if !(1024..65535).contains(&uconf.ssh_base_port) {
        report.push(
            "uconf.ssh_base_port",
            "ssh_base_port in [1024, 65535)",
            format!("port {} out of range", uconf.ssh_base_port),
        );
    }

    // One application node per host.
    let needed = app.process_count as usize;
    if !pool.systems.is_empty() && needed >= 1 && !pool.systems.iter().any(|s| s.hosts.len() >= needed) {
        let best = pool.systems.iter().map(|s| s.hosts.len()).max().unwrap_or(0);
        report.push(
            "app.process_count",
            "insufficient hosts",
            format!("{needed} processes need {needed} hosts; largest system has {best}"),
        );
    }

    report
}
