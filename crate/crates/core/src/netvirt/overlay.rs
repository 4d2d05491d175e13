//! Engine-side driver for a set of live agents wired as one overlay.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, BufReader};
use std::net::{IpAddr, Ipv4Addr, SocketAddr};
use std::path::PathBuf;
use std::process::{Child, ChildStdout, Command, Stdio};
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::agent::{self, AgentAddrs, AgentConfig, AgentHandle, Role, HUB};
use super::control::{ControlClient, ControlRequest, ControlResponse};
use super::cost::{Link, Send};
use super::topology::{NodeId, Topology, TopologyKind};
use super::NetError;

const WIRING_TIMEOUT: Duration = Duration::from_secs(15);
const DELIVERY_TIMEOUT: Duration = Duration::from_secs(30);

/// How agents are started.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Launcher {
    /// Agents run on threads of the current process.
    Threads,
    /// Each agent is a child process: `<program> agent --node <id> --topology <file>`.
    Process { program: PathBuf },
}

enum Runtime {
    Thread(AgentHandle),
    Process { child: Child, _stdout: BufReader<ChildStdout> },
}

struct Member {
    role: Role,
    addrs: AgentAddrs,
    client: ControlClient,
    runtime: Runtime,
    alive: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "result", rename_all = "snake_case")]
pub enum SendOutcome {
    Delivered { hop_count: u16 },
    Failed { failed_relay: NodeId, detected_at: NodeId },
    SourceDown,
}

pub struct Overlay {
    topology: Topology,
    nodes: Vec<Member>,
    hub: Option<Member>,
    next_msg: u64,
    _workdir: Option<tempfile::TempDir>,
}

fn launch(
    role: Role,
    topology: &Topology,
    launcher: &Launcher,
    workdir: Option<&std::path::Path>,
) -> Result<Member, NetError> {
    let listen_ip = IpAddr::V4(Ipv4Addr::LOCALHOST);
    let (addrs, runtime) = match launcher {
        Launcher::Threads => {
            let h = agent::spawn(AgentConfig { role, topology: topology.clone(), listen_ip })?;
            (h.addrs, Runtime::Thread(h))
        }
        Launcher::Process { program } => {
            let topo_file = workdir.expect("process launcher has a workdir").join("topology.json");
            let mut cmd = Command::new(program);
            cmd.arg("agent").arg("--topology").arg(&topo_file).arg("--listen").arg(listen_ip.to_string());
            match role {
                Role::Node(id) => cmd.arg("--node").arg(id.to_string()),
                Role::Hub => cmd.arg("--hub"),
            };
            let mut child = cmd.stdin(Stdio::null()).stdout(Stdio::piped()).stderr(Stdio::inherit()).spawn()?;
            let mut stdout = BufReader::new(child.stdout.take().expect("piped stdout"));
            let mut line = String::new();
            stdout.read_line(&mut line)?;
            let Some(addrs) = AgentAddrs::parse_ready_line(&line) else {
                let _ = child.kill();
                let _ = child.wait();
                return Err(NetError::Protocol(format!("agent did not announce itself: {line:?}")));
            };
            (addrs, Runtime::Process { child, _stdout: stdout })
        }
    };
    let client = ControlClient::connect(addrs.ctl)?;
    Ok(Member { role, addrs, client, runtime, alive: true })
}

impl Overlay {
    /// Starts one agent per node (plus the hub for multicast), wires the
    /// edges and waits until every link reports up.
    pub fn launch(topology: Topology, launcher: &Launcher) -> Result<Self, NetError> {
        let workdir = match launcher {
            Launcher::Threads => None,
            Launcher::Process { .. } => {
                let dir = tempfile::tempdir()?;
                let json = serde_json::to_vec(&topology).map_err(|e| NetError::Protocol(e.to_string()))?;
                std::fs::write(dir.path().join("topology.json"), json)?;
                Some(dir)
            }
        };
        let wd = workdir.as_ref().map(|d| d.path());
        let hub = if topology.kind == TopologyKind::Multicast && topology.n > 1 {
            Some(launch(Role::Hub, &topology, launcher, wd)?)
        } else {
            None
        };
        let mut nodes = Vec::with_capacity(topology.n);
        for id in 0..topology.n as NodeId {
            nodes.push(launch(Role::Node(id), &topology, launcher, wd)?);
        }
        let mut overlay = Self { topology, nodes, hub, next_msg: 0, _workdir: workdir };
        overlay.wire()?;
        Ok(overlay)
    }

    fn wire(&mut self) -> Result<(), NetError> {
        let peers: BTreeMap<NodeId, SocketAddr> = self.nodes.iter().map(|m| (m.role.wire_id(), m.addrs.mpi)).collect();
        let hub = self.hub.as_ref().map(|h| h.addrs.mpi);
        for m in &mut self.nodes {
            m.client.request(&ControlRequest::Connect { peers: peers.clone(), hub })?;
        }
        self.wait_links(|_, down| down.is_empty())
    }

    fn members_mut(&mut self) -> impl Iterator<Item = &mut Member> {
        self.nodes.iter_mut().chain(self.hub.iter_mut())
    }

    /// Polls every live agent until `ok(member, down_links)` holds for all.
    fn wait_links(&mut self, ok: impl Fn(&Member, &[NodeId]) -> bool) -> Result<(), NetError> {
        let deadline = Instant::now() + WIRING_TIMEOUT;
        loop {
            let mut settled = true;
            for m in self.members_mut().filter(|m| m.alive) {
                if let ControlResponse::Links { down, .. } = m.client.request(&ControlRequest::Links)? {
                    if !ok(m, &down) {
                        settled = false;
                    }
                }
            }
            if settled {
                return Ok(());
            }
            if Instant::now() > deadline {
                return Err(NetError::Timeout("overlay links did not settle".into()));
            }
            thread::sleep(Duration::from_millis(2));
        }
    }

    pub fn topology(&self) -> &Topology {
        &self.topology
    }

    pub fn is_alive(&self, node: NodeId) -> bool {
        self.nodes.get(usize::from(node)).is_some_and(|m| m.alive)
    }

    pub fn addrs(&self, node: NodeId) -> Option<AgentAddrs> {
        self.nodes.get(usize::from(node)).map(|m| m.addrs)
    }

    pub fn control(&mut self, node: NodeId, req: &ControlRequest) -> Result<ControlResponse, NetError> {
        let m = self.nodes.get_mut(usize::from(node)).ok_or(NetError::NodeOutOfRange { node, n: self.topology.n })?;
        if !m.alive {
            return Err(NetError::NodeDown(node));
        }
        m.client.request(req)
    }

    fn kill_member(m: &mut Member) {
        if !m.alive {
            return;
        }
        m.alive = false;
        match &mut m.runtime {
            Runtime::Thread(h) => h.kill(),
            Runtime::Process { child, .. } => {
                let _ = child.kill();
                let _ = child.wait();
            }
        }
    }

    /// Kills a node abruptly and waits until every surviving neighbor has
    /// noticed the dead link.
    pub fn kill(&mut self, node: NodeId) -> Result<(), NetError> {
        let m = self.nodes.get_mut(usize::from(node)).ok_or(NetError::NodeOutOfRange { node, n: self.topology.n })?;
        Self::kill_member(m);
        self.wait_links(|m, down| match m.role {
            Role::Hub => down.contains(&node),
            Role::Node(_) => true,
        })?;
        let neighbors: BTreeSet<NodeId> = self.topology.neighbors(node).into_iter().collect();
        self.wait_links(|m, down| !neighbors.contains(&m.role.wire_id()) || down.contains(&node))
    }

    pub fn kill_hub(&mut self) -> Result<(), NetError> {
        if let Some(h) = self.hub.as_mut() {
            Self::kill_member(h);
        }
        self.wait_links(|m, down| matches!(m.role, Role::Hub) || down.contains(&HUB))
    }

    /// Sends one frame per entry of `trace` and waits until each is either
    /// delivered or reported lost.
    pub fn send_trace(&mut self, trace: &[Send]) -> Result<Vec<SendOutcome>, NetError> {
        let mut outcomes: Vec<Option<SendOutcome>> = vec![None; trace.len()];
        let mut by_payload: BTreeMap<String, usize> = BTreeMap::new();
        for (i, s) in trace.iter().enumerate() {
            let msg_id = self.next_msg;
            self.next_msg += 1;
            let payload = message_payload(msg_id, s.bytes);
            let hex_payload = hex::encode(&payload);
            if !self.is_alive(s.src) {
                outcomes[i] = Some(SendOutcome::SourceDown);
                continue;
            }
            by_payload.insert(hex_payload.clone(), i);
            self.control(s.src, &ControlRequest::Send { dst: s.dst, payload: hex_payload })?;
        }

        let deadline = Instant::now() + DELIVERY_TIMEOUT;
        while outcomes.iter().any(Option::is_none) {
            for m in self.members_mut().filter(|m| m.alive) {
                if let ControlResponse::Drained { delivered, failures } = m.client.request(&ControlRequest::Drain)? {
                    for d in delivered {
                        if let Some(&i) = by_payload.get(&d.payload) {
                            outcomes[i] = Some(SendOutcome::Delivered { hop_count: d.hop_count });
                        }
                    }
                    for f in failures {
                        if let Some(&i) = by_payload.get(&f.payload) {
                            outcomes[i] =
                                Some(SendOutcome::Failed { failed_relay: f.failed_relay, detected_at: f.detected_at });
                        }
                    }
                }
            }
            if outcomes.iter().any(Option::is_none) {
                if Instant::now() > deadline {
                    return Err(NetError::Timeout("messages neither delivered nor reported lost".into()));
                }
                thread::sleep(Duration::from_millis(1));
            }
        }
        Ok(outcomes.into_iter().map(|o| o.expect("all settled")).collect())
    }

    pub fn send(&mut self, src: NodeId, dst: NodeId, payload_len: u64) -> Result<SendOutcome, NetError> {
        Ok(self.send_trace(&[Send { src, dst, bytes: payload_len }])?.remove(0))
    }

    /// Frames received per link, as counted by the receiving agents.
    pub fn link_frames(&mut self) -> Result<BTreeMap<Link, u64>, NetError> {
        let mut out = BTreeMap::new();
        for m in self.nodes.iter_mut().filter(|m| m.alive) {
            let me = m.role.wire_id();
            if let ControlResponse::Stats { rx_frames } = m.client.request(&ControlRequest::Stats)? {
                for (peer, count) in rx_frames {
                    let link = if peer == HUB { Link::Hub(me) } else { Link::edge(me, peer) };
                    *out.entry(link).or_default() += count;
                }
            }
        }
        out.retain(|_, v| *v > 0);
        Ok(out)
    }

    pub fn shutdown(mut self) {
        self.shutdown_all();
    }

    fn shutdown_all(&mut self) {
        for m in self.members_mut() {
            if m.alive {
                let _ = m.client.request(&ControlRequest::Shutdown);
            }
            if let Runtime::Process { child, .. } = &mut m.runtime {
                let deadline = Instant::now() + Duration::from_secs(2);
                loop {
                    match child.try_wait() {
                        Ok(Some(_)) => break,
                        Ok(None) if Instant::now() < deadline => thread::sleep(Duration::from_millis(5)),
                        _ => {
                            let _ = child.kill();
                            let _ = child.wait();
                            break;
                        }
                    }
                }
            }
            m.alive = false;
        }
    }
}

impl Drop for Overlay {
    fn drop(&mut self) {
        self.shutdown_all();
    }
}

/// Unique, deterministic payload: 8-byte message id then filler.
fn message_payload(msg_id: u64, len: u64) -> Vec<u8> {
    let mut p = msg_id.to_be_bytes().to_vec();
    let target = (len as usize).max(p.len());
    p.extend((p.len()..target).map(|i| (i as u8).wrapping_mul(31) ^ (msg_id as u8)));
    p
}
