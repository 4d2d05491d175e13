//! Shared-storage performance model.
//!
//! With the data-image design only the master mounts the image; workers go
//! through the master's NFS export, whose ceiling is split evenly across the
//! workers doing I/O at the same time. Virtio maps a host directory into
//! every node: reads run at native speed, writes at 90% of native.

use serde::{Deserialize, Serialize};

use crate::model::{ComputeSystem, StorageSolution};
use crate::netvirt::NodeId;

use super::StorageError;

/// Bytes per MB in every bandwidth figure.
pub const MB: f64 = (1u64 << 20) as f64;

pub const VIRTIO_WRITE_FACTOR: f64 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StorageKind {
    DataImageNfs,
    VirtioPassthrough,
    /// Provider-managed shared file system (EFS-style) on cloud backends.
    NativeShared,
}

impl From<StorageSolution> for StorageKind {
    fn from(s: StorageSolution) -> Self {
        match s {
            StorageSolution::DataImageNfs => StorageKind::DataImageNfs,
            StorageSolution::VirtioPassthrough => StorageKind::VirtioPassthrough,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IoOp {
    Read,
    Write,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoragePlan {
    pub solution: StorageKind,
    pub system_id: String,
    pub nodes: usize,
    pub master_node: Option<NodeId>,
    pub mount_path: String,
    pub native_read: f64,
    pub native_write: f64,
    pub nfs_cap: f64,
}

impl StoragePlan {
    pub fn for_system(solution: StorageKind, system: &ComputeSystem, nodes: usize) -> Self {
        Self {
            solution,
            system_id: system.id.clone(),
            nodes,
            master_node: Some(0),
            mount_path: "/bee/data".into(),
            native_read: system.disk_bandwidth_native.read,
            native_write: system.disk_bandwidth_native.write,
            nfs_cap: system.nfs_cap,
        }
    }

    pub fn check(&self) -> Result<(), StorageError> {
        for (name, v) in
            [("native_read", self.native_read), ("native_write", self.native_write), ("nfs_cap", self.nfs_cap)]
        {
            if !(v.is_finite() && v > 0.0) {
                return Err(StorageError::InvalidPlan(format!("{name} must be positive")));
            }
        }
        if self.solution == StorageKind::DataImageNfs && self.master_node.is_none() {
            return Err(StorageError::InvalidPlan("data image plan needs a master node".into()));
        }
        Ok(())
    }

    fn native(&self, op: IoOp) -> f64 {
        match op {
            IoOp::Read => self.native_read,
            IoOp::Write => self.native_write,
        }
    }

    pub fn is_master(&self, node: NodeId) -> bool {
        self.master_node == Some(node)
    }

    /// Effective MB/s seen by `node` while `active_workers` workers share
    /// the NFS export.
    pub fn effective_bw(&self, node: NodeId, op: IoOp, active_workers: usize) -> Result<f64, StorageError> {
        if usize::from(node) >= self.nodes {
            return Err(StorageError::UnknownNode { node, nodes: self.nodes });
        }
        let native = self.native(op);
        Ok(match self.solution {
            StorageKind::DataImageNfs if self.is_master(node) => native,
            StorageKind::DataImageNfs => native.min(self.nfs_cap / active_workers.max(1) as f64),
            StorageKind::VirtioPassthrough => match op {
                IoOp::Read => native,
                IoOp::Write => VIRTIO_WRITE_FACTOR * native,
            },
            StorageKind::NativeShared => native,
        })
    }
}

/// Simulated seconds for `node` to move `bytes`.
pub fn model_io(
    plan: &StoragePlan,
    node: NodeId,
    op: IoOp,
    bytes: u64,
    active_workers: usize,
) -> Result<f64, StorageError> {
    let bw = plan.effective_bw(node, op, active_workers)?;
    if bytes == 0 {
        return Ok(0.0);
    }
    Ok(bytes as f64 / MB / bw)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IorPhase {
    /// Slowest node's MB/s.
    pub per_node_min: f64,
    /// All bytes over the phase duration.
    pub aggregate: f64,
    /// Worker bytes over the slowest worker's duration; absent with no workers.
    pub worker_aggregate: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IorRow {
    pub n_nodes: usize,
    pub write: IorPhase,
    pub read: IorPhase,
}

/// IOR-style run: one process per node writes `bytes_per_proc`, then every
/// process reads the file a different node wrote. All processes of a phase
/// run concurrently.
pub fn ior_benchmark(plan: &StoragePlan, bytes_per_proc: u64) -> Result<IorRow, StorageError> {
    plan.check()?;
    let n = plan.nodes;
    let workers =
        (0..n as NodeId).filter(|&i| !(plan.solution == StorageKind::DataImageNfs && plan.is_master(i))).count();
    let phase = |op: IoOp| -> Result<IorPhase, StorageError> {
        let mut durations = Vec::with_capacity(n);
        for node in 0..n as NodeId {
            durations.push((node, model_io(plan, node, op, bytes_per_proc, workers)?));
        }
        let mb = bytes_per_proc as f64 / MB;
        let slowest = durations.iter().map(|d| d.1).fold(0.0, f64::max);
        let worker_ds: Vec<f64> = durations
            .iter()
            .filter(|(node, _)| !(plan.solution == StorageKind::DataImageNfs && plan.is_master(*node)))
            .map(|d| d.1)
            .collect();
        let worker_slowest = worker_ds.iter().copied().fold(0.0, f64::max);
        Ok(IorPhase {
            per_node_min: mb / slowest,
            aggregate: mb * n as f64 / slowest,
            worker_aggregate: (!worker_ds.is_empty()).then(|| mb * worker_ds.len() as f64 / worker_slowest),
        })
    };
    Ok(IorRow { n_nodes: n, write: phase(IoOp::Write)?, read: phase(IoOp::Read)? })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::fixtures;

    const GIB: u64 = 1 << 30;

    fn plan(kind: StorageKind, nodes: usize, read: f64, write: f64) -> StoragePlan {
        let mut sys = fixtures::system("s", nodes, 100.0);
        sys.disk_bandwidth_native.read = read;
        sys.disk_bandwidth_native.write = write;
        StoragePlan::for_system(kind, &sys, nodes)
    }

    #[test]
    fn virtio_write_is_ninety_percent() {
        let p = plan(StorageKind::VirtioPassthrough, 2, 1000.0, 500.0);
        let t = model_io(&p, 1, IoOp::Write, GIB, 1).unwrap();
        assert!((t - 1024.0 / 450.0).abs() < 1e-12);
        assert!((t - 2.2756).abs() < 1e-3);
    }

    #[test]
    fn nfs_worker_read_at_cap() {
        let p = plan(StorageKind::DataImageNfs, 2, 1000.0, 500.0);
        let t = model_io(&p, 1, IoOp::Read, GIB, 1).unwrap();
        assert!((t - 8.192).abs() < 1e-12);
        // The master mounts the image directly.
        assert!((model_io(&p, 0, IoOp::Read, GIB, 1).unwrap() - 1.024).abs() < 1e-12);
    }

    #[test]
    fn zero_bytes_zero_time() {
        let p = plan(StorageKind::DataImageNfs, 2, 1000.0, 500.0);
        assert_eq!(model_io(&p, 1, IoOp::Write, 0, 1).unwrap(), 0.0);
    }

    #[test]
    fn unknown_node() {
        let p = plan(StorageKind::VirtioPassthrough, 2, 1000.0, 500.0);
        assert!(matches!(model_io(&p, 2, IoOp::Read, 1, 1), Err(StorageError::UnknownNode { node: 2, nodes: 2 })));
    }

    #[test]
    fn nfs_cap_shared_among_workers() {
        let p = plan(StorageKind::DataImageNfs, 5, 1000.0, 500.0);
        assert!((p.effective_bw(3, IoOp::Read, 4).unwrap() - 125.0 / 4.0).abs() < 1e-12);
    }

    #[test]
    fn nfs_flat_aggregate() {
        for n in 2..=32 {
            let row = ior_benchmark(&plan(StorageKind::DataImageNfs, n, 1000.0, 800.0), GIB).unwrap();
            for agg in [row.read.worker_aggregate.unwrap(), row.write.worker_aggregate.unwrap()] {
                assert!((agg - 125.0).abs() < 1e-9, "n={n}: {agg}");
            }
        }
    }

    #[test]
    fn invalid_plan() {
        let mut p = plan(StorageKind::DataImageNfs, 2, 1000.0, 500.0);
        p.master_node = None;
        assert!(p.check().is_err());
        p.master_node = Some(0);
        p.nfs_cap = 0.0;
        assert!(p.check().is_err());
    }
}
