//! Execution backends.
//!
//! A [`Backend`] owns one compute system for one time slot. The cluster
//! deployer and the orchestrator talk only to this trait, so the same
//! control loop runs against the discrete-event simulator ([`sim`]), real
//! agents over sockets ([`local`]), and the cloud-style simulator flavors.

pub mod app_model;
pub mod local;
pub mod perf;
pub mod sim;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cluster::{HostRegistry, NodeHandle, ProvisionStep};
use crate::model::{ComputeSystem, ContainerSource, HardwareConfig, Host, SystemKind};
use crate::netvirt::{Launcher, TopologyKind};
use crate::storage::StorageKind;

pub use app_model::AppImage;
pub use perf::{replay_scaling, sim_compute, PerfProfile, ScalingError, ScalingParams, ScalingRow};

/// Actions that exist only when a VM layer is deployed.
pub const VM_LAYER_ACTIONS: [&str; 7] =
    ["create_vm", "create_img", "configure", "setup_shared_vol", "setup_network", "register_vm", "start_vm"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BackendKind {
    SimHpc,
    Local,
    SimCloudAws,
    SimCloudBaremetal,
}

impl BackendKind {
    pub fn for_system(kind: SystemKind) -> Self {
        match kind {
            SystemKind::Hpc => BackendKind::SimHpc,
            SystemKind::CloudAwsLike => BackendKind::SimCloudAws,
            SystemKind::CloudBaremetalLike => BackendKind::SimCloudBaremetal,
        }
    }

    pub fn default_overhead(self) -> f64 {
        match self {
            BackendKind::SimHpc | BackendKind::Local | BackendKind::SimCloudAws => 0.09,
            BackendKind::SimCloudBaremetal => 0.0,
        }
    }

    pub fn capability(self, system: &ComputeSystem, overhead: f64, hop_latency_s: f64) -> BackendCapability {
        let perf = PerfProfile {
            cpu_rate: system.cpu_rate_native,
            cpu_overhead_fraction: overhead,
            net_bandwidth: system.net_bandwidth_native,
            disk_read: system.disk_bandwidth_native.read,
            disk_write: system.disk_bandwidth_native.write,
            hop_latency_s,
        };
        let (has_vm_layer, native_shared_fs, topology_choices) = match self {
            BackendKind::SimHpc | BackendKind::Local => (true, false, TopologyKind::HPC.into_iter().collect()),
            BackendKind::SimCloudAws => (true, true, BTreeSet::from([TopologyKind::Flat])),
            BackendKind::SimCloudBaremetal => (false, true, BTreeSet::from([TopologyKind::Flat])),
        };
        BackendCapability { has_vm_layer, native_shared_fs, topology_choices, perf }
    }
}

impl fmt::Display for BackendKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BackendKind::SimHpc => "sim-hpc",
            BackendKind::Local => "local",
            BackendKind::SimCloudAws => "sim-cloud-aws",
            BackendKind::SimCloudBaremetal => "sim-cloud-baremetal",
        })
    }
}

impl std::str::FromStr for BackendKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "sim-hpc" => Ok(BackendKind::SimHpc),
            "local" => Ok(BackendKind::Local),
            "sim-cloud-aws" => Ok(BackendKind::SimCloudAws),
            "sim-cloud-baremetal" => Ok(BackendKind::SimCloudBaremetal),
            other => Err(format!("unknown backend {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendCapability {
    pub has_vm_layer: bool,
    pub native_shared_fs: bool,
    pub topology_choices: BTreeSet<TopologyKind>,
    pub perf: PerfProfile,
}

impl BackendCapability {
    /// Overlay used for a requested network solution.
    pub fn topology_for(&self, requested: TopologyKind) -> TopologyKind {
        if self.topology_choices.contains(&requested) {
            requested
        } else {
            *self.topology_choices.iter().next().expect("at least one topology")
        }
    }

    pub fn storage_for(&self, requested: StorageKind) -> StorageKind {
        if self.native_shared_fs {
            StorageKind::NativeShared
        } else {
            requested
        }
    }
}

/// One entry of a backend's event log. Deployment events carry their
/// pipeline stage (1-4); runtime events use stage 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimEvent {
    pub t: f64,
    pub stage: u8,
    pub host: Option<String>,
    pub action: String,
    pub ok: bool,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub detail: String,
}

/// Renders an event log as newline-delimited JSON.
pub fn events_to_ndjson(events: &[SimEvent]) -> String {
    let mut out = String::new();
    for e in events {
        out.push_str(&serde_json::to_string(e).expect("event serializes"));
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error, Serialize, Deserialize)]
pub enum BackendError {
    #[error("{op} failed on host {host}: {cause}")]
    OpFailed { host: String, op: String, cause: String },
    #[error("node failure on host {host}")]
    NodeFailure { host: String },
    #[error("checkpoint write failed: {0}")]
    CheckpointWrite(String),
    #[error("{0}")]
    Other(String),
}

impl BackendError {
    pub fn host(&self) -> Option<&str> {
        match self {
            BackendError::OpFailed { host, .. } | BackendError::NodeFailure { host } => Some(host),
            _ => None,
        }
    }
}

/// Injected faults, consumed by the simulator and the local backend.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "fault", rename_all = "snake_case")]
pub enum Fault {
    /// The named action fails on `host` (or on every host when absent).
    FailAction {
        action: String,
        host: Option<String>,
    },
    /// `node` (a node index) dies `after` seconds of application run time.
    NodeFailure {
        node: usize,
        after: f64,
    },
    /// The next `times` inbound transfers arrive with a flipped byte.
    CorruptTransfer {
        times: u32,
    },
    CheckpointWriteFailure,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct FaultPlan {
    pub faults: Vec<Fault>,
}

impl FaultPlan {
    pub fn fails(&self, action: &str, host: &str) -> bool {
        self.faults.iter().any(|f| match f {
            Fault::FailAction { action: a, host: h } => a == action && h.as_deref().map_or(true, |h| h == host),
            _ => false,
        })
    }

    pub fn node_failure(&self) -> Option<(usize, f64)> {
        self.faults.iter().find_map(|f| match f {
            Fault::NodeFailure { node, after } => Some((*node, *after)),
            _ => None,
        })
    }

    pub fn corrupt_transfers(&self) -> u32 {
        self.faults.iter().map(|f| if let Fault::CorruptTransfer { times } = f { *times } else { 0 }).sum()
    }

    pub fn checkpoint_write_fails(&self) -> bool {
        self.faults.iter().any(|f| matches!(f, Fault::CheckpointWriteFailure))
    }
}

/// Fixed per-action costs (seconds) for the simulated backends.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimCosts {
    pub register_host: f64,
    pub create_vm: f64,
    pub create_img: f64,
    pub configure: f64,
    pub setup_shared_vol: f64,
    pub setup_network: f64,
    pub register_vm: f64,
    pub vm_boot: f64,
    pub create_docker: f64,
    pub image_size_mb: f64,
    pub build_step: f64,
    pub build_steps: u32,
    pub container_start: f64,
    pub app_start: f64,
    pub image_step: f64,
    /// Relative jitter applied to each action, drawn from the seeded RNG.
    pub jitter: f64,
}

impl Default for SimCosts {
    fn default() -> Self {
        Self {
            register_host: 0.1,
            create_vm: 2.0,
            create_img: 5.0,
            configure: 1.0,
            setup_shared_vol: 1.0,
            setup_network: 1.0,
            register_vm: 0.1,
            vm_boot: 20.0,
            create_docker: 1.0,
            image_size_mb: 500.0,
            build_step: 30.0,
            build_steps: 5,
            container_start: 2.0,
            app_start: 1.0,
            image_step: 60.0,
            jitter: 0.1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BackendSelection {
    /// Pick the simulator flavor matching each system's kind.
    #[default]
    Auto,
    SimHpc,
    Local,
    SimCloudAws,
    SimCloudBaremetal,
}

impl BackendSelection {
    pub fn resolve(self, kind: SystemKind) -> BackendKind {
        match self {
            BackendSelection::Auto => BackendKind::for_system(kind),
            BackendSelection::SimHpc => BackendKind::SimHpc,
            BackendSelection::Local => BackendKind::Local,
            BackendSelection::SimCloudAws => BackendKind::SimCloudAws,
            BackendSelection::SimCloudBaremetal => BackendKind::SimCloudBaremetal,
        }
    }
}

impl std::str::FromStr for BackendSelection {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "auto" | "sim" => BackendSelection::Auto,
            other => match other.parse::<BackendKind>()? {
                BackendKind::SimHpc => BackendSelection::SimHpc,
                BackendKind::Local => BackendSelection::Local,
                BackendKind::SimCloudAws => BackendSelection::SimCloudAws,
                BackendKind::SimCloudBaremetal => BackendSelection::SimCloudBaremetal,
            },
        })
    }
}

/// Backend selection and calibration (the system config file).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BackendConfig {
    pub backend: BackendSelection,
    pub seed: u64,
    /// Overrides the per-backend default when set.
    pub cpu_overhead_fraction: Option<f64>,
    pub hop_latency_ms: f64,
    pub costs: SimCosts,
    /// Local backend: real seconds per simulated second.
    pub time_scale: f64,
    /// Local backend: binary that runs `agent`; threads are used when absent.
    pub agent_program: Option<PathBuf>,
    /// Faults keyed by system id.
    pub faults: BTreeMap<String, FaultPlan>,
}

impl Default for BackendConfig {
    fn default() -> Self {
        Self {
            backend: BackendSelection::Auto,
            seed: 0,
            cpu_overhead_fraction: None,
            hop_latency_ms: 1.0,
            costs: SimCosts::default(),
            time_scale: 0.002,
            agent_program: None,
            faults: BTreeMap::new(),
        }
    }
}

impl BackendConfig {
    pub fn overhead_for(&self, kind: BackendKind) -> f64 {
        self.cpu_overhead_fraction.unwrap_or_else(|| kind.default_overhead())
    }

    pub fn launcher(&self) -> Launcher {
        match &self.agent_program {
            Some(p) => Launcher::Process { program: p.clone() },
            None => Launcher::Threads,
        }
    }

    /// Seed for one system: stable across runs, distinct across systems.
    pub fn system_seed(&self, system_id: &str) -> u64 {
        let h = Sha256::digest(system_id.as_bytes());
        self.seed ^ u64::from_le_bytes(h[..8].try_into().expect("8 bytes"))
    }
}

/// Everything stage 2 needs to bring up one node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProvisionRequest {
    pub host: Host,
    pub node_index: usize,
    pub vm_id: String,
    pub base_image: String,
    pub uconf: HardwareConfig,
    pub ssh_port: u16,
    pub storage: StorageKind,
    pub topology: TopologyKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProvisionedNode {
    pub vm_id: Option<String>,
    pub mpi_addr: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExecOutput {
    pub exit_code: i32,
    pub output: String,
}

/// Parameters for starting the application on the master node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AppLaunch {
    pub entry_command: Vec<String>,
    pub work_total: u64,
    pub processes: u32,
    pub vcpus: u32,
}

impl AppLaunch {
    pub fn cores(&self) -> u32 {
        self.processes.saturating_mul(self.vcpus).max(1)
    }
}

/// Contract shared by every backend.
///
/// Batch methods apply a per-host operation to every node under a
/// parallel-map contract and return once all hosts have finished.
pub trait Backend: Send {
    fn kind(&self) -> BackendKind;
    fn capability(&self) -> &BackendCapability;
    fn system(&self) -> &ComputeSystem;

    /// Current time in (simulated) seconds.
    fn now(&self) -> f64;
    /// Lets `seconds` of (simulated) time pass.
    fn wait(&mut self, seconds: f64);
    fn events(&self) -> &[SimEvent];
    fn log(&mut self, stage: u8, host: Option<&str>, action: &str, ok: bool, detail: &str);

    fn registry(&self) -> &HostRegistry;
    fn registry_mut(&mut self) -> &mut HostRegistry;

    /// Offline image customization step; returns its cost in seconds.
    fn image_step(&mut self, step: &ProvisionStep) -> Result<f64, BackendError>;

    fn register_host(&mut self, cluster: &str, host: &Host) -> Result<(), BackendError>;
    fn provision(&mut self, reqs: &[ProvisionRequest]) -> Result<Vec<ProvisionedNode>, BackendError>;
    fn start_all(&mut self, nodes: &[NodeHandle], parallelism: usize) -> Result<(), BackendError>;
    fn create_containers(
        &mut self,
        nodes: &[NodeHandle],
        source: &ContainerSource,
    ) -> Result<Vec<String>, BackendError>;
    fn start_containers(&mut self, nodes: &[NodeHandle], parallelism: usize) -> Result<(), BackendError>;
    fn exec(&mut self, node: &NodeHandle, argv: &[String]) -> Result<ExecOutput, BackendError>;
    fn start_app(&mut self, master: &NodeHandle, launch: &AppLaunch) -> Result<(), BackendError>;
    fn progress(&mut self, master: &NodeHandle) -> Result<u64, BackendError>;
    fn pause(&mut self, nodes: &[NodeHandle]) -> Result<(), BackendError>;
    fn resume(&mut self, nodes: &[NodeHandle]) -> Result<(), BackendError>;
    fn stop(&mut self, nodes: &[NodeHandle]) -> Result<(), BackendError>;
    /// Stages the data image on the system; the next `start_app` resumes
    /// from whatever progress marker it carries.
    fn put_volume(&mut self, bytes: &[u8]) -> Result<(), BackendError>;
    /// Current data image as seen from the master, with the application
    /// state folded in.
    fn fetch_volume(&mut self, master: &NodeHandle) -> Result<Vec<u8>, BackendError>;

    /// Receives a volume shipped from another system; `seconds` is the
    /// modeled transfer time. Fault injection may corrupt the bytes.
    fn receive_transfer(&mut self, bytes: Vec<u8>, seconds: f64) -> Vec<u8>;
    /// Charges the checkpoint write and reports injected write failures.
    fn persist_checkpoint(&mut self, seconds: f64) -> Result<(), BackendError>;
}

pub trait BackendFactory {
    fn create(&mut self, system: &ComputeSystem) -> Result<Box<dyn Backend>, BackendError>;
}

/// Builds the backend named by a [`BackendConfig`] for each system.
#[derive(Debug, Clone, Default)]
pub struct DefaultFactory {
    pub config: BackendConfig,
}

impl DefaultFactory {
    pub fn new(config: BackendConfig) -> Self {
        Self { config }
    }
}

impl BackendFactory for DefaultFactory {
    fn create(&mut self, system: &ComputeSystem) -> Result<Box<dyn Backend>, BackendError> {
        let kind = self.config.backend.resolve(system.kind);
        let faults = self.config.faults.get(&system.id).cloned().unwrap_or_default();
        Ok(match kind {
            BackendKind::Local => Box::new(local::LocalBackend::new(system.clone(), &self.config, faults)),
            _ => Box::new(sim::SimBackend::new(kind, system.clone(), &self.config, faults)),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::fixtures;

    #[test]
    fn cloud_capabilities() {
        let sys = fixtures::system("c", 2, 10.0);
        let aws = BackendKind::SimCloudAws.capability(&sys, 0.09, 0.001);
        assert!(aws.has_vm_layer && aws.native_shared_fs);
        let bm = BackendKind::SimCloudBaremetal.capability(&sys, 0.0, 0.001);
        assert!(!bm.has_vm_layer);
        let hpc = BackendKind::SimHpc.capability(&sys, 0.09, 0.001);
        assert!(hpc.has_vm_layer && !hpc.native_shared_fs);
        assert_eq!(hpc.topology_for(TopologyKind::P2pStar), TopologyKind::P2pStar);
        assert_eq!(aws.topology_for(TopologyKind::P2pStar), TopologyKind::Flat);
    }

    #[test]
    fn fault_matching() {
        let plan = FaultPlan {
            faults: vec![
                Fault::FailAction { action: "img_build".into(), host: Some("h2".into()) },
                Fault::FailAction { action: "create_vm".into(), host: None },
                Fault::CorruptTransfer { times: 2 },
            ],
        };
        assert!(plan.fails("img_build", "h2"));
        assert!(!plan.fails("img_build", "h1"));
        assert!(plan.fails("create_vm", "anything"));
        assert_eq!(plan.corrupt_transfers(), 2);
        assert!(!plan.checkpoint_write_fails());
    }

    #[test]
    fn config_json_defaults() {
        let c: BackendConfig = serde_json::from_str(r#"{"backend":"sim-hpc","seed":7}"#).unwrap();
        assert_eq!(c.backend, BackendSelection::SimHpc);
        assert_eq!(c.hop_latency_ms, 1.0);
        assert_eq!(c.overhead_for(BackendKind::SimHpc), 0.09);
        assert_eq!(c.overhead_for(BackendKind::SimCloudBaremetal), 0.0);
        assert_ne!(c.system_seed("a"), c.system_seed("b"));
    }
}
