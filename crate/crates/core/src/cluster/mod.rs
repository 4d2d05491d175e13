//! Virtual cluster deployment: the four-stage pipeline, the per-host
//! registry of ports, handles and volumes, and the base image recipe.

mod deploy;
mod image;
mod registry;

pub use deploy::{
    deploy_cluster, deploy_cluster_with, pause, resume, stop, ClusterError, DeployError, DeployOptions,
    CONTAINER_DATA_PATH,
};
pub use image::{build_image, BuildLogEntry, BuiltImage, ImageError, ImageRecipe, ProvisionStep, RecipeError};
pub use registry::{HostRegistry, RegistryError};

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::model::Host;
use crate::netvirt::Topology;
use crate::storage::StoragePlan;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClusterStatus {
    Defined,
    VmLayerUp,
    DockerLayerUp,
    AppRunning,
    Paused,
    Stopped,
}

impl ClusterStatus {
    pub fn can_move_to(self, next: ClusterStatus) -> bool {
        use ClusterStatus::*;
        match (self, next) {
            (Defined, VmLayerUp) | (VmLayerUp, DockerLayerUp) | (DockerLayerUp, AppRunning) => true,
            (AppRunning, Paused) | (Paused, AppRunning) => true,
            (Stopped, _) => false,
            (_, Stopped) => true,
            _ => false,
        }
    }
}

impl fmt::Display for ClusterStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ClusterStatus::Defined => "defined",
            ClusterStatus::VmLayerUp => "vm_layer_up",
            ClusterStatus::DockerLayerUp => "docker_layer_up",
            ClusterStatus::AppRunning => "app_running",
            ClusterStatus::Paused => "paused",
            ClusterStatus::Stopped => "stopped",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("cannot move cluster from {from} to {to}")]
pub struct TransitionError {
    pub from: ClusterStatus,
    pub to: ClusterStatus,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeRole {
    Master,
    Worker,
}

/// What the application container sees: the node's network addresses,
/// passed through unchanged, and its volume mounts (container path to
/// node path).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContainerView {
    pub addrs: Vec<String>,
    pub mounts: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeHandle {
    pub host_id: String,
    pub index: usize,
    /// Absent on backends without a VM layer.
    pub vm_id: Option<String>,
    pub docker_id: Option<String>,
    pub role: NodeRole,
    pub ssh_forward_port: u16,
    pub mpi_vnic_addr: String,
    pub container: Option<ContainerView>,
}

impl NodeHandle {
    /// Addresses of the node itself: SSH forward on the host, then the MPI vNIC.
    pub fn addrs(&self) -> Vec<String> {
        vec![format!("{}:{}", self.host_id, self.ssh_forward_port), self.mpi_vnic_addr.clone()]
    }

    pub fn is_master(&self) -> bool {
        self.role == NodeRole::Master
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterState {
    pub name: String,
    pub hosts: Vec<Host>,
    pub nodes: Vec<NodeHandle>,
    pub topology: Topology,
    pub storage_plan: StoragePlan,
    pub status: ClusterStatus,
}

impl ClusterState {
    pub fn master(&self) -> Option<&NodeHandle> {
        self.nodes.iter().find(|n| n.is_master())
    }

    pub fn transition(&mut self, to: ClusterStatus) -> Result<(), TransitionError> {
        if !self.status.can_move_to(to) {
            return Err(TransitionError { from: self.status, to });
        }
        self.status = to;
        Ok(())
    }
}
