//! Local-process backend: every node is a live agent wired into the chosen
//! overlay over real sockets, and the application is the agents' work
//! meters. Deployment costs and the event log come from an embedded
//! simulator so slot budgets stay in simulated seconds; `wait` also sleeps
//! `seconds * time_scale` of wall time so the meters see time pass.

use std::thread;
use std::time::Duration;

use crate::cluster::{HostRegistry, NodeHandle, ProvisionStep};
use crate::model::{ComputeSystem, ContainerSource, Host};
use crate::netvirt::control::{ControlRequest, ControlResponse};
use crate::netvirt::{Launcher, NetError, NodeId, Overlay, Topology};

use super::sim::SimBackend;
use super::{
    AppLaunch, Backend, BackendCapability, BackendConfig, BackendError, BackendKind, ExecOutput, FaultPlan,
    ProvisionRequest, ProvisionedNode, SimEvent,
};

pub struct LocalBackend {
    inner: SimBackend,
    launcher: Launcher,
    time_scale: f64,
    overlay: Option<Overlay>,
    hosts: Vec<String>,
    start_base: u64,
    work_total: u64,
}

impl LocalBackend {
    pub fn new(system: ComputeSystem, config: &BackendConfig, faults: FaultPlan) -> Self {
        Self {
            inner: SimBackend::new(BackendKind::Local, system, config, faults),
            launcher: config.launcher(),
            time_scale: config.time_scale.max(0.0),
            overlay: None,
            hosts: Vec::new(),
            start_base: 0,
            work_total: 0,
        }
    }

    pub fn overlay_mut(&mut self) -> Option<&mut Overlay> {
        self.overlay.as_mut()
    }

    fn host_of(&self, node: usize) -> String {
        self.hosts.get(node).cloned().unwrap_or_else(|| format!("node{node}"))
    }

    fn net_err(&self, node: usize, op: &str, e: NetError) -> BackendError {
        match e {
            NetError::NodeDown(_) | NetError::Io(_) | NetError::ControlClosed => {
                BackendError::NodeFailure { host: self.host_of(node) }
            }
            other => BackendError::OpFailed { host: self.host_of(node), op: op.to_string(), cause: other.to_string() },
        }
    }

    fn broadcast(&mut self, nodes: &[NodeHandle], req: &ControlRequest, op: &str) -> Result<(), BackendError> {
        for n in nodes {
            let res = match self.overlay.as_mut() {
                Some(o) => o.control(n.index as NodeId, req),
                None => return Err(BackendError::Other("agents not running".into())),
            };
            res.map_err(|e| self.net_err(n.index, op, e))?;
        }
        Ok(())
    }

    fn inject_node_failure(&mut self) {
        let (Some((node, after)), Some(run)) = (self.inner.faults().node_failure(), self.inner.app_run_time()) else {
            return;
        };
        if run < after {
            return;
        }
        if let Some(o) = self.overlay.as_mut() {
            if o.is_alive(node as NodeId) {
                let _ = o.kill(node as NodeId);
            }
        }
    }

    /// Start marker plus the work every node's meter has counted.
    fn metered_progress(&mut self) -> Result<u64, BackendError> {
        let n = self.hosts.len();
        let mut total = self.start_base;
        for i in 0..n {
            let res = match self.overlay.as_mut() {
                Some(o) => o.control(i as NodeId, &ControlRequest::Progress),
                None => return Err(BackendError::Other("agents not running".into())),
            };
            match res {
                Ok(ControlResponse::Progress { units }) => total += units,
                Ok(other) => {
                    return Err(BackendError::OpFailed {
                        host: self.host_of(i),
                        op: "progress".into(),
                        cause: format!("{other:?}"),
                    })
                }
                Err(e) => return Err(self.net_err(i, "progress", e)),
            }
        }
        Ok(total.min(self.work_total.max(self.start_base)))
    }
}

impl Backend for LocalBackend {
    fn kind(&self) -> BackendKind {
        BackendKind::Local
    }

    fn capability(&self) -> &BackendCapability {
        self.inner.capability()
    }

    fn system(&self) -> &ComputeSystem {
        self.inner.system()
    }

    fn now(&self) -> f64 {
        self.inner.now()
    }

    fn wait(&mut self, seconds: f64) {
        self.inner.wait(seconds);
        if seconds > 0.0 && self.time_scale > 0.0 {
            thread::sleep(Duration::from_secs_f64(seconds * self.time_scale));
        }
    }

    fn events(&self) -> &[SimEvent] {
        self.inner.events()
    }

    fn log(&mut self, stage: u8, host: Option<&str>, action: &str, ok: bool, detail: &str) {
        self.inner.log(stage, host, action, ok, detail);
    }

    fn registry(&self) -> &HostRegistry {
        self.inner.registry()
    }

    fn registry_mut(&mut self) -> &mut HostRegistry {
        self.inner.registry_mut()
    }

    fn image_step(&mut self, step: &ProvisionStep) -> Result<f64, BackendError> {
        self.inner.image_step(step)
    }

    fn register_host(&mut self, cluster: &str, host: &Host) -> Result<(), BackendError> {
        self.inner.register_host(cluster, host)
    }

    fn provision(&mut self, reqs: &[ProvisionRequest]) -> Result<Vec<ProvisionedNode>, BackendError> {
        let mut nodes = self.inner.provision(reqs)?;
        let Some(first) = reqs.first() else { return Ok(nodes) };
        let launch_err = |e: NetError| BackendError::OpFailed {
            host: first.host.id.clone(),
            op: "launch_agent".into(),
            cause: e.to_string(),
        };
        let topo = Topology::build(first.topology, reqs.len()).map_err(launch_err)?;
        let overlay = Overlay::launch(topo, &self.launcher).map_err(launch_err)?;
        for (i, n) in nodes.iter_mut().enumerate() {
            if let Some(a) = overlay.addrs(i as NodeId) {
                n.mpi_addr = a.mpi.to_string();
            }
        }
        self.hosts = reqs.iter().map(|r| r.host.id.clone()).collect();
        self.overlay = Some(overlay);
        Ok(nodes)
    }

    fn start_all(&mut self, nodes: &[NodeHandle], parallelism: usize) -> Result<(), BackendError> {
        self.inner.start_all(nodes, parallelism)?;
        for n in nodes {
            let res = match self.overlay.as_mut() {
                Some(o) => o.control(n.index as NodeId, &ControlRequest::Links),
                None => return Err(BackendError::Other("agents not running".into())),
            };
            match res {
                Ok(ControlResponse::Links { down, .. }) if down.is_empty() => {}
                Ok(_) => {
                    return Err(BackendError::OpFailed {
                        host: n.host_id.clone(),
                        op: "start_vm".into(),
                        cause: "links down".into(),
                    })
                }
                Err(e) => return Err(self.net_err(n.index, "start_vm", e)),
            }
        }
        Ok(())
    }

    fn create_containers(
        &mut self,
        nodes: &[NodeHandle],
        source: &ContainerSource,
    ) -> Result<Vec<String>, BackendError> {
        self.inner.create_containers(nodes, source)
    }

    fn start_containers(&mut self, nodes: &[NodeHandle], parallelism: usize) -> Result<(), BackendError> {
        self.inner.start_containers(nodes, parallelism)
    }

    fn exec(&mut self, node: &NodeHandle, argv: &[String]) -> Result<ExecOutput, BackendError> {
        self.inner.log(0, Some(&node.host_id), "exec", true, "");
        let res = match self.overlay.as_mut() {
            Some(o) => o.control(node.index as NodeId, &ControlRequest::Exec { argv: argv.to_vec() }),
            None => return Err(BackendError::Other("agents not running".into())),
        };
        match res {
            Ok(ControlResponse::Exec { exit_code, output }) => Ok(ExecOutput { exit_code, output }),
            Ok(other) => Err(BackendError::OpFailed {
                host: node.host_id.clone(),
                op: "exec".into(),
                cause: format!("{other:?}"),
            }),
            Err(e) => Err(self.net_err(node.index, "exec", e)),
        }
    }

    fn start_app(&mut self, master: &NodeHandle, launch: &AppLaunch) -> Result<(), BackendError> {
        self.inner.start_app(master, launch)?;
        self.start_base = self.inner.app_base().unwrap_or(0);
        self.work_total = launch.work_total;
        let n = self.hosts.len().max(1);
        let per_node = self.inner.capability().perf.throughput(launch.cores()) / n as f64;
        let units_per_sec = if self.time_scale > 0.0 { per_node / self.time_scale } else { f64::MAX };
        let nodes: Vec<NodeHandle> = (0..self.hosts.len())
            .map(|i| NodeHandle { index: i, host_id: self.host_of(i), ..master.clone() })
            .collect();
        self.broadcast(&nodes, &ControlRequest::StartWork { units_per_sec }, "start_app")
    }

    fn progress(&mut self, _master: &NodeHandle) -> Result<u64, BackendError> {
        self.inject_node_failure();
        for i in 0..self.hosts.len() {
            if self.overlay.as_ref().is_some_and(|o| !o.is_alive(i as NodeId)) {
                let host = self.host_of(i);
                self.inner.log(0, Some(&host), "node_failure", false, "");
                return Err(BackendError::NodeFailure { host });
            }
        }
        self.metered_progress()
    }

    fn pause(&mut self, nodes: &[NodeHandle]) -> Result<(), BackendError> {
        self.broadcast(nodes, &ControlRequest::Pause, "pause")?;
        self.inner.pause(nodes)
    }

    fn resume(&mut self, nodes: &[NodeHandle]) -> Result<(), BackendError> {
        self.broadcast(nodes, &ControlRequest::Resume, "resume")?;
        self.inner.resume(nodes)
    }

    fn stop(&mut self, nodes: &[NodeHandle]) -> Result<(), BackendError> {
        if let Some(o) = self.overlay.take() {
            o.shutdown();
        }
        self.inner.stop(nodes)
    }

    fn put_volume(&mut self, bytes: &[u8]) -> Result<(), BackendError> {
        self.inner.put_volume(bytes)
    }

    fn fetch_volume(&mut self, _master: &NodeHandle) -> Result<Vec<u8>, BackendError> {
        let p = self.metered_progress()?;
        self.inner.image_at(p)
    }

    fn receive_transfer(&mut self, bytes: Vec<u8>, seconds: f64) -> Vec<u8> {
        self.inner.receive_transfer(bytes, seconds)
    }

    fn persist_checkpoint(&mut self, seconds: f64) -> Result<(), BackendError> {
        self.inner.persist_checkpoint(seconds)
    }
}
