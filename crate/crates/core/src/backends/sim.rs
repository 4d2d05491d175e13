//! Discrete-event backend. Time is logical; every action has a seeded,
//! jittered cost, and per-host work inside a stage is list-scheduled onto
//! `parallelism` lanes so the log stays ordered by completion time.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::cluster::{HostRegistry, NodeHandle, ProvisionStep};
use crate::model::{ComputeSystem, ContainerSource, Host};

use super::app_model::AppImage;
use super::{
    AppLaunch, Backend, BackendCapability, BackendConfig, BackendError, BackendKind, ExecOutput, FaultPlan,
    ProvisionRequest, ProvisionedNode, SimCosts, SimEvent,
};

struct AppRun {
    image: AppImage,
    work_total: u64,
    /// Units per simulated second, whole cluster.
    rate: f64,
    base: u64,
    running_since: Option<f64>,
    /// Run time banked before the last pause.
    banked: f64,
}

impl AppRun {
    fn progress_at(&self, t: f64) -> u64 {
        let live = self.running_since.map_or(0, |s| ((t - s).max(0.0) * self.rate).floor() as u64);
        (self.base + live).min(self.work_total.max(self.base))
    }

    fn run_time_at(&self, t: f64) -> f64 {
        self.banked + self.running_since.map_or(0.0, |s| (t - s).max(0.0))
    }
}

pub struct SimBackend {
    kind: BackendKind,
    system: ComputeSystem,
    capability: BackendCapability,
    costs: SimCosts,
    rng: ChaCha8Rng,
    t: f64,
    events: Vec<SimEvent>,
    registry: HostRegistry,
    faults: FaultPlan,
    corrupt_left: u32,
    staged: Option<AppImage>,
    app: Option<AppRun>,
}

impl SimBackend {
    pub fn new(kind: BackendKind, system: ComputeSystem, config: &BackendConfig, faults: FaultPlan) -> Self {
        let capability = kind.capability(&system, config.overhead_for(kind), config.hop_latency_ms / 1000.0);
        Self {
            kind,
            rng: ChaCha8Rng::seed_from_u64(config.system_seed(&system.id)),
            system,
            capability,
            costs: config.costs.clone(),
            t: 0.0,
            events: Vec::new(),
            registry: HostRegistry::new(),
            corrupt_left: faults.corrupt_transfers(),
            faults,
            staged: None,
            app: None,
        }
    }

    pub fn faults(&self) -> &FaultPlan {
        &self.faults
    }

    fn jittered(&mut self, base: f64) -> f64 {
        let j = self.costs.jitter.clamp(0.0, 1.0);
        if j == 0.0 || base == 0.0 {
            return base;
        }
        base * (1.0 + j * self.rng.gen_range(-1.0..1.0))
    }

    fn push(&mut self, t: f64, stage: u8, host: Option<&str>, action: &str, ok: bool, detail: &str) {
        self.events.push(SimEvent {
            t,
            stage,
            host: host.map(str::to_string),
            action: action.to_string(),
            ok,
            detail: detail.to_string(),
        });
    }

    /// One sequential action on `host`.
    fn act(&mut self, stage: u8, host: &str, action: &str, base_cost: f64) -> Result<f64, BackendError> {
        let cost = self.jittered(base_cost);
        self.t += cost;
        let ok = !self.faults.fails(action, host);
        self.push(self.t, stage, Some(host), action, ok, "");
        if ok {
            Ok(cost)
        } else {
            Err(injected(host, action))
        }
    }

    /// Runs each host's action list, hosts list-scheduled on `parallelism`
    /// lanes in input order. Costs are drawn in host order before
    /// scheduling, so lane count never changes what is drawn.
    fn parallel(
        &mut self,
        stage: u8,
        jobs: Vec<(String, Vec<(&str, f64)>)>,
        parallelism: usize,
    ) -> Result<(), BackendError> {
        let drawn: Vec<(String, Vec<(&str, f64)>)> = jobs
            .into_iter()
            .map(|(host, actions)| {
                let actions = actions.into_iter().map(|(a, c)| (a, self.jittered(c))).collect();
                (host, actions)
            })
            .collect();
        let start = self.t;
        let mut lanes = vec![start; parallelism.max(1)];
        let mut timeline: Vec<(f64, usize, usize, String, &str, bool)> = Vec::new();
        for (i, (host, actions)) in drawn.iter().enumerate() {
            let lane = (0..lanes.len()).min_by(|&a, &b| lanes[a].total_cmp(&lanes[b])).expect("one lane");
            let mut t = lanes[lane];
            for (k, (action, cost)) in actions.iter().enumerate() {
                t += cost;
                let ok = !self.faults.fails(action, host);
                timeline.push((t, i, k, host.clone(), action, ok));
                if !ok {
                    break;
                }
            }
            lanes[lane] = t;
        }
        timeline.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        let failure = timeline.iter().position(|e| !e.5);
        let cut = failure.map_or(timeline.len(), |i| i + 1);
        for (t, _, _, host, action, ok) in &timeline[..cut] {
            self.push(*t, stage, Some(host), action, *ok, "");
        }
        self.t = timeline[..cut].iter().map(|e| e.0).fold(start, f64::max);
        match failure {
            Some(i) => Err(injected(&timeline[i].3, timeline[i].4)),
            None => Ok(()),
        }
    }

    fn check_node_failure(&mut self) -> Result<(), BackendError> {
        let (Some((node, after)), Some(app)) = (self.faults.node_failure(), self.app.as_ref()) else {
            return Ok(());
        };
        if app.run_time_at(self.t) >= after {
            let host = self.system.hosts.get(node).map_or_else(|| format!("node{node}"), |h| h.id.clone());
            if !self.events.iter().any(|e| e.action == "node_failure") {
                self.push(self.t, 0, Some(&host), "node_failure", false, "");
            }
            return Err(BackendError::NodeFailure { host });
        }
        Ok(())
    }

    /// Application progress the simulator itself would report.
    pub(crate) fn app_progress(&self) -> Option<u64> {
        self.app.as_ref().map(|a| a.progress_at(self.t))
    }

    pub(crate) fn app_base(&self) -> Option<u64> {
        self.app.as_ref().map(|a| a.base)
    }

    pub(crate) fn app_run_time(&self) -> Option<f64> {
        self.app.as_ref().map(|a| a.run_time_at(self.t))
    }

    /// Encoded image after running the application to `progress`.
    pub(crate) fn image_at(&mut self, progress: u64) -> Result<Vec<u8>, BackendError> {
        let app = self.app.as_mut().ok_or_else(|| BackendError::Other("application not started".into()))?;
        app.image.advance_to(progress.min(app.work_total.max(app.image.progress())));
        Ok(app.image.encode())
    }

    pub(crate) fn pause_app(&mut self) {
        let t = self.t;
        if let Some(app) = self.app.as_mut() {
            if let Some(since) = app.running_since.take() {
                app.base =
                    (app.base + ((t - since).max(0.0) * app.rate).floor() as u64).min(app.work_total.max(app.base));
                app.banked += (t - since).max(0.0);
            }
        }
    }

    pub(crate) fn resume_app(&mut self) {
        let t = self.t;
        if let Some(app) = self.app.as_mut() {
            app.running_since.get_or_insert(t);
        }
    }
}

fn injected(host: &str, op: &str) -> BackendError {
    BackendError::OpFailed { host: host.to_string(), op: op.to_string(), cause: "injected fault".into() }
}

impl Backend for SimBackend {
    fn kind(&self) -> BackendKind {
        self.kind
    }

    fn capability(&self) -> &BackendCapability {
        &self.capability
    }

    fn system(&self) -> &ComputeSystem {
        &self.system
    }

    fn now(&self) -> f64 {
        self.t
    }

    fn wait(&mut self, seconds: f64) {
        if seconds > 0.0 {
            self.t += seconds;
        }
    }

    fn events(&self) -> &[SimEvent] {
        &self.events
    }

    fn log(&mut self, stage: u8, host: Option<&str>, action: &str, ok: bool, detail: &str) {
        self.push(self.t, stage, host, action, ok, detail);
    }

    fn registry(&self) -> &HostRegistry {
        &self.registry
    }

    fn registry_mut(&mut self) -> &mut HostRegistry {
        &mut self.registry
    }

    fn image_step(&mut self, step: &ProvisionStep) -> Result<f64, BackendError> {
        let cost = self.jittered(self.costs.image_step);
        self.t += cost;
        let ok = !self.faults.fails(step.kind(), "builder");
        self.push(self.t, 0, None, "image_step", ok, step.kind());
        if ok {
            Ok(cost)
        } else {
            Err(injected("builder", step.kind()))
        }
    }

    fn register_host(&mut self, _cluster: &str, host: &Host) -> Result<(), BackendError> {
        self.act(1, &host.id, "register_host", self.costs.register_host).map(|_| ())
    }

    fn provision(&mut self, reqs: &[ProvisionRequest]) -> Result<Vec<ProvisionedNode>, BackendError> {
        let c = &self.costs;
        let vm_actions = [
            ("create_vm", c.create_vm),
            ("create_img", c.create_img),
            ("configure", c.configure),
            ("setup_shared_vol", c.setup_shared_vol),
            ("setup_network", c.setup_network),
            ("register_vm", c.register_vm),
        ];
        let bare_actions = [("prepare_host", c.configure)];
        let actions: &[(&str, f64)] = if self.capability.has_vm_layer { &vm_actions } else { &bare_actions };
        let jobs = reqs.iter().map(|r| (r.host.id.clone(), actions.to_vec())).collect();
        self.parallel(2, jobs, reqs.len())?;
        Ok(reqs
            .iter()
            .map(|r| ProvisionedNode {
                vm_id: self.capability.has_vm_layer.then(|| r.vm_id.clone()),
                mpi_addr: format!("10.{}.0.{}", r.topology as u8 + 1, r.node_index + 1),
            })
            .collect())
    }

    fn start_all(&mut self, nodes: &[NodeHandle], parallelism: usize) -> Result<(), BackendError> {
        if !self.capability.has_vm_layer {
            return Ok(());
        }
        let jobs = nodes.iter().map(|n| (n.host_id.clone(), vec![("start_vm", self.costs.vm_boot)])).collect();
        self.parallel(2, jobs, parallelism)
    }

    fn create_containers(
        &mut self,
        nodes: &[NodeHandle],
        source: &ContainerSource,
    ) -> Result<Vec<String>, BackendError> {
        let fetch = match source {
            ContainerSource::ImageRef(_) => {
                ("docker_pull", self.costs.image_size_mb / self.system.net_bandwidth_native)
            }
            ContainerSource::Buildfile(_) => {
                ("docker_build", self.costs.build_step * f64::from(self.costs.build_steps))
            }
        };
        let jobs = nodes
            .iter()
            .map(|n| (n.host_id.clone(), vec![fetch, ("create_docker", self.costs.create_docker)]))
            .collect();
        self.parallel(3, jobs, nodes.len())?;
        Ok(nodes.iter().map(|n| format!("dkr-{}-{}", n.host_id, n.index)).collect())
    }

    fn start_containers(&mut self, nodes: &[NodeHandle], parallelism: usize) -> Result<(), BackendError> {
        let jobs =
            nodes.iter().map(|n| (n.host_id.clone(), vec![("start_container", self.costs.container_start)])).collect();
        self.parallel(3, jobs, parallelism)
    }

    fn exec(&mut self, node: &NodeHandle, argv: &[String]) -> Result<ExecOutput, BackendError> {
        self.act(0, &node.host_id, "exec", 0.0)?;
        Ok(ExecOutput { exit_code: 0, output: argv.join(" ") })
    }

    fn start_app(&mut self, master: &NodeHandle, launch: &AppLaunch) -> Result<(), BackendError> {
        self.act(4, &master.host_id, "start_app", self.costs.app_start)?;
        let image = self.staged.take().unwrap_or_else(|| AppImage::fresh(Vec::new()));
        let base = image.progress();
        self.app = Some(AppRun {
            image,
            work_total: launch.work_total,
            rate: self.capability.perf.throughput(launch.cores()),
            base,
            running_since: Some(self.t),
            banked: 0.0,
        });
        Ok(())
    }

    fn progress(&mut self, _master: &NodeHandle) -> Result<u64, BackendError> {
        self.check_node_failure()?;
        self.app_progress().ok_or_else(|| BackendError::Other("application not started".into()))
    }

    fn pause(&mut self, nodes: &[NodeHandle]) -> Result<(), BackendError> {
        self.pause_app();
        for n in nodes {
            self.push(self.t, 0, Some(&n.host_id), "pause", true, "");
        }
        Ok(())
    }

    fn resume(&mut self, nodes: &[NodeHandle]) -> Result<(), BackendError> {
        self.resume_app();
        for n in nodes {
            self.push(self.t, 0, Some(&n.host_id), "resume", true, "");
        }
        Ok(())
    }

    fn stop(&mut self, nodes: &[NodeHandle]) -> Result<(), BackendError> {
        self.pause_app();
        self.app = None;
        for n in nodes {
            self.push(self.t, 0, Some(&n.host_id), "stop", true, "");
        }
        Ok(())
    }

    fn put_volume(&mut self, bytes: &[u8]) -> Result<(), BackendError> {
        self.staged = Some(AppImage::decode(bytes));
        self.push(self.t, 0, None, "put_volume", true, &bytes.len().to_string());
        Ok(())
    }

    fn fetch_volume(&mut self, _master: &NodeHandle) -> Result<Vec<u8>, BackendError> {
        let p = self.app_progress().ok_or_else(|| BackendError::Other("application not started".into()))?;
        self.image_at(p)
    }

    fn receive_transfer(&mut self, mut bytes: Vec<u8>, seconds: f64) -> Vec<u8> {
        self.wait(seconds);
        let corrupt = self.corrupt_left > 0;
        if corrupt {
            self.corrupt_left -= 1;
            match bytes.first_mut() {
                Some(b) => *b ^= 0x5a,
                None => bytes.push(0x5a),
            }
        }
        self.push(self.t, 0, None, "transfer", !corrupt, &bytes.len().to_string());
        bytes
    }

    fn persist_checkpoint(&mut self, seconds: f64) -> Result<(), BackendError> {
        self.wait(seconds);
        let ok = !self.faults.checkpoint_write_fails();
        self.push(self.t, 0, None, "checkpoint_write", ok, "");
        if ok {
            Ok(())
        } else {
            Err(BackendError::CheckpointWrite("injected fault".into()))
        }
    }
}
