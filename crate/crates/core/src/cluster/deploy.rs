use std::collections::BTreeMap;
use std::fmt;

use crate::backends::{AppLaunch, Backend, BackendError, ProvisionRequest};
use crate::model::{AppSpec, HardwareConfig, Host};
use crate::netvirt::Topology;
use crate::storage::StoragePlan;

use super::{ClusterState, ClusterStatus, ContainerView, NodeHandle, NodeRole, TransitionError};

/// Path the data volume is mounted at inside every container.
pub const CONTAINER_DATA_PATH: &str = "/data";
const DATA_VOLUME: &str = "data";

#[derive(Debug, Clone, PartialEq)]
pub struct DeployOptions {
    /// Hosts started concurrently in the parallel stages; 0 means all.
    pub parallelism: usize,
    pub base_image: String,
}

impl Default for DeployOptions {
    fn default() -> Self {
        Self { parallelism: 0, base_image: "bee-base".into() }
    }
}

/// A failed deploy. The cluster has already been torn down.
#[derive(Debug, Clone, PartialEq)]
pub struct DeployError {
    pub stage: u8,
    pub host: Option<String>,
    pub cause: String,
    pub cluster: Box<ClusterState>,
}

impl fmt::Display for DeployError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.host {
            Some(h) => write!(f, "stage {} failed on host {h}: {}", self.stage, self.cause),
            None => write!(f, "stage {} failed: {}", self.stage, self.cause),
        }
    }
}

impl std::error::Error for DeployError {}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ClusterError {
    #[error(transparent)]
    Transition(#[from] TransitionError),
    #[error(transparent)]
    Backend(#[from] BackendError),
}

pub fn deploy_cluster(
    hosts: &[Host],
    app: &AppSpec,
    cname: &str,
    uconf: &HardwareConfig,
    backend: &mut dyn Backend,
) -> Result<ClusterState, DeployError> {
    deploy_cluster_with(hosts, app, cname, uconf, backend, &DeployOptions::default())
}

pub fn deploy_cluster_with(
    hosts: &[Host],
    app: &AppSpec,
    cname: &str,
    uconf: &HardwareConfig,
    backend: &mut dyn Backend,
    opts: &DeployOptions,
) -> Result<ClusterState, DeployError> {
    let n = app.process_count.max(1) as usize;
    let cap = backend.capability().clone();
    let used: Vec<Host> = hosts.iter().take(n).cloned().collect();
    let topology = Topology::build(cap.topology_for(uconf.network_solution.into()), used.len().max(1))
        .expect("node count within overlay limits");
    let storage_plan =
        StoragePlan::for_system(cap.storage_for(uconf.storage_solution.into()), backend.system(), used.len());
    let mut cluster = ClusterState {
        name: cname.to_string(),
        hosts: used,
        nodes: Vec::new(),
        topology,
        storage_plan,
        status: ClusterStatus::Defined,
    };
    let parallelism = if opts.parallelism == 0 { n } else { opts.parallelism };

    let fail =
        |cluster: &mut ClusterState, backend: &mut dyn Backend, stage: u8, host: Option<String>, cause: String| {
            teardown(cluster, backend, stage);
            DeployError { stage, host, cause, cluster: Box::new(cluster.clone()) }
        };
    let from_backend = |e: BackendError| (e.host().map(str::to_string), e.to_string());

    // Stage 1: cluster and host registration.
    if cluster.hosts.len() < n {
        let cause = format!("{n} nodes need {n} hosts, {} available", cluster.hosts.len());
        return Err(fail(&mut cluster, backend, 1, None, cause));
    }
    backend.log(1, None, "create_cluster", true, cname);
    for h in cluster.hosts.clone() {
        if let Err(e) = backend.register_host(cname, &h) {
            let (host, cause) = from_backend(e);
            return Err(fail(&mut cluster, backend, 1, host.or(Some(h.id)), cause));
        }
    }

    // Stage 2: one VM (or bare host) per host, then a parallel start.
    let mut reqs = Vec::with_capacity(n);
    for (i, h) in cluster.hosts.clone().iter().enumerate() {
        let port = match backend.registry_mut().allocate_ssh_forward(&h.id, uconf.ssh_base_port as u16) {
            Ok(p) => p,
            Err(e) => return Err(fail(&mut cluster, backend, 2, Some(h.id.clone()), e.to_string())),
        };
        reqs.push(ProvisionRequest {
            host: h.clone(),
            node_index: i,
            vm_id: format!("{cname}-vm{i}"),
            base_image: opts.base_image.clone(),
            uconf: uconf.clone(),
            ssh_port: port,
            storage: cluster.storage_plan.solution,
            topology: cluster.topology.kind,
        });
    }
    let provisioned = match backend.provision(&reqs) {
        Ok(p) => p,
        Err(e) => {
            let (host, cause) = from_backend(e);
            return Err(fail(&mut cluster, backend, 2, host, cause));
        }
    };
    for (req, p) in reqs.iter().zip(provisioned) {
        if let Some(vm) = &p.vm_id {
            backend.registry_mut().register_handle(&req.host.id, vm);
        }
        cluster.nodes.push(NodeHandle {
            host_id: req.host.id.clone(),
            index: req.node_index,
            vm_id: p.vm_id,
            docker_id: None,
            role: if req.node_index == 0 { NodeRole::Master } else { NodeRole::Worker },
            ssh_forward_port: req.ssh_port,
            mpi_vnic_addr: p.mpi_addr,
            container: None,
        });
    }
    if let Err(e) = backend.start_all(&cluster.nodes, parallelism) {
        let (host, cause) = from_backend(e);
        return Err(fail(&mut cluster, backend, 2, host, cause));
    }
    cluster.status = ClusterStatus::VmLayerUp;

    // Stage 3: containers share the node's network and mount its data path.
    let docker_ids = match backend.create_containers(&cluster.nodes, &app.container_source) {
        Ok(ids) => ids,
        Err(e) => {
            let (host, cause) = from_backend(e);
            return Err(fail(&mut cluster, backend, 3, host, cause));
        }
    };
    let mount_path = cluster.storage_plan.mount_path.clone();
    for (node, id) in cluster.nodes.iter_mut().zip(docker_ids) {
        backend.registry_mut().register_handle(&node.host_id, &id);
        node.docker_id = Some(id);
        node.container = Some(ContainerView {
            addrs: node.addrs(),
            mounts: BTreeMap::from([(CONTAINER_DATA_PATH.to_string(), mount_path.clone())]),
        });
    }
    if let Err(e) = backend.start_containers(&cluster.nodes, parallelism) {
        let (host, cause) = from_backend(e);
        return Err(fail(&mut cluster, backend, 3, host, cause));
    }
    cluster.status = ClusterStatus::DockerLayerUp;

    // Stage 4: the application starts on the master only.
    let master = cluster.nodes[0].clone();
    backend.registry_mut().mount_volume(&master.host_id, DATA_VOLUME);
    let launch = AppLaunch {
        entry_command: app.entry_command.clone(),
        work_total: app.work_total,
        processes: n as u32,
        vcpus: uconf.vcpus,
    };
    if let Err(e) = backend.start_app(&master, &launch) {
        let (host, cause) = from_backend(e);
        return Err(fail(&mut cluster, backend, 4, host.or(Some(master.host_id)), cause));
    }
    cluster.status = ClusterStatus::AppRunning;
    Ok(cluster)
}

fn release(cluster: &ClusterState, backend: &mut dyn Backend) {
    let reg = backend.registry_mut();
    for h in &cluster.hosts {
        reg.clear_host(&h.id);
    }
}

fn teardown(cluster: &mut ClusterState, backend: &mut dyn Backend, stage: u8) {
    if !cluster.nodes.is_empty() {
        let _ = backend.stop(&cluster.nodes);
    }
    release(cluster, backend);
    backend.log(stage, None, "teardown", true, &cluster.name);
    cluster.status = ClusterStatus::Stopped;
}

/// Freezes the application's progress clock on every node.
pub fn pause(cluster: &mut ClusterState, backend: &mut dyn Backend) -> Result<ClusterStatus, ClusterError> {
    if !cluster.status.can_move_to(ClusterStatus::Paused) {
        return Err(TransitionError { from: cluster.status, to: ClusterStatus::Paused }.into());
    }
    backend.pause(&cluster.nodes)?;
    cluster.transition(ClusterStatus::Paused)?;
    Ok(cluster.status)
}

pub fn resume(cluster: &mut ClusterState, backend: &mut dyn Backend) -> Result<ClusterStatus, ClusterError> {
    if !(cluster.status == ClusterStatus::Paused && cluster.status.can_move_to(ClusterStatus::AppRunning)) {
        return Err(TransitionError { from: cluster.status, to: ClusterStatus::AppRunning }.into());
    }
    backend.resume(&cluster.nodes)?;
    cluster.transition(ClusterStatus::AppRunning)?;
    Ok(cluster.status)
}

/// Stops every node and releases its ports, handles and volumes. The
/// release happens even when the backend reports an error.
pub fn stop(cluster: &mut ClusterState, backend: &mut dyn Backend) -> Result<ClusterStatus, ClusterError> {
    if !cluster.status.can_move_to(ClusterStatus::Stopped) {
        return Err(TransitionError { from: cluster.status, to: ClusterStatus::Stopped }.into());
    }
    let res = backend.stop(&cluster.nodes);
    release(cluster, backend);
    cluster.status = ClusterStatus::Stopped;
    res?;
    Ok(cluster.status)
}
