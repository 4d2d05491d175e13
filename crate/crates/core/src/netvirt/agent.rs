//! Per-node relay agent for the MPI plane.
//!
//! An agent listens on two sockets: the MPI plane, where neighbors exchange
//! [`Frame`]s along overlay edges, and the control plane, where the engine
//! issues [`ControlRequest`]s. Frames not addressed to the agent are
//! forwarded to the next hop of the route (store-and-forward). In multicast
//! mode every agent holds a single link to a hub, which repeats each frame
//! to all other agents.
//!
//! The same code runs inside a thread ([`spawn`]) or as a separate OS
//! process ([`serve_forever`], used by `bee agent`).

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Write};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::control::{ControlRequest, ControlResponse, Delivery, RelayFailure};
use super::frame::{self, Frame};
use super::topology::{NodeId, Topology, TopologyKind};
use super::NetError;

/// Node id the hub uses on the wire.
pub const HUB: NodeId = NodeId::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Node(NodeId),
    Hub,
}

impl Role {
    pub fn wire_id(self) -> NodeId {
        match self {
            Role::Node(id) => id,
            Role::Hub => HUB,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AgentConfig {
    pub role: Role,
    pub topology: Topology,
    pub listen_ip: std::net::IpAddr,
}

/// Addresses an agent announces once it is listening.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentAddrs {
    pub mpi: SocketAddr,
    pub ctl: SocketAddr,
}

impl AgentAddrs {
    pub fn ready_line(&self, role: Role) -> String {
        let who = match role {
            Role::Node(id) => id.to_string(),
            Role::Hub => "hub".to_string(),
        };
        format!("READY {who} mpi={} ctl={}", self.mpi, self.ctl)
    }

    pub fn parse_ready_line(line: &str) -> Option<Self> {
        let mut mpi = None;
        let mut ctl = None;
        for tok in line.split_whitespace() {
            if let Some(v) = tok.strip_prefix("mpi=") {
                mpi = v.parse().ok();
            } else if let Some(v) = tok.strip_prefix("ctl=") {
                ctl = v.parse().ok();
            }
        }
        Some(Self { mpi: mpi?, ctl: ctl? })
    }
}

struct Link {
    writer: Mutex<TcpStream>,
    up: AtomicBool,
}

#[derive(Default)]
struct Work {
    units_per_sec: f64,
    banked_secs: f64,
    running_since: Option<Instant>,
}

impl Work {
    fn units(&self) -> u64 {
        let live = self.running_since.map_or(0.0, |t| t.elapsed().as_secs_f64());
        ((self.banked_secs + live) * self.units_per_sec).floor() as u64
    }

    fn pause(&mut self) {
        if let Some(t) = self.running_since.take() {
            self.banked_secs += t.elapsed().as_secs_f64();
        }
    }
}

struct Shared {
    role: Role,
    topology: Topology,
    links: Mutex<BTreeMap<NodeId, Arc<Link>>>,
    delivered: Mutex<Vec<Delivery>>,
    failures: Mutex<Vec<RelayFailure>>,
    rx_frames: Mutex<BTreeMap<NodeId, u64>>,
    work: Mutex<Work>,
    exec_log: Mutex<Vec<Vec<String>>>,
    shutdown: AtomicBool,
}

impl Shared {
    fn id(&self) -> NodeId {
        self.role.wire_id()
    }

    /// Links this agent must hold once the overlay is wired.
    fn expected_links(&self) -> Vec<NodeId> {
        match (self.role, self.topology.kind) {
            (Role::Hub, _) => (0..self.topology.n as NodeId).collect(),
            (Role::Node(_), TopologyKind::Multicast) => vec![HUB],
            (Role::Node(id), _) => self.topology.neighbors(id),
        }
    }

    fn link(&self, peer: NodeId) -> Option<Arc<Link>> {
        self.links.lock().unwrap().get(&peer).cloned()
    }

    fn register(self: &Arc<Self>, peer: NodeId, stream: TcpStream) -> Result<(), NetError> {
        stream.set_nodelay(true)?;
        let reader = stream.try_clone()?;
        let link = Arc::new(Link { writer: Mutex::new(stream), up: AtomicBool::new(true) });
        self.links.lock().unwrap().insert(peer, link.clone());
        let me = Arc::clone(self);
        thread::spawn(move || me.read_loop(peer, reader, link));
        Ok(())
    }

    fn read_loop(self: Arc<Self>, peer: NodeId, mut stream: TcpStream, link: Arc<Link>) {
        loop {
            match Frame::read_from(&mut stream) {
                Ok(Some(f)) => {
                    *self.rx_frames.lock().unwrap().entry(peer).or_default() += 1;
                    self.on_frame(f);
                }
                Ok(None) | Err(_) => break,
            }
        }
        link.up.store(false, Ordering::SeqCst);
    }

    /// Hands `frame` to `peer`; records a relay failure naming `peer` when
    /// the link is missing or broken.
    fn transmit(&self, peer: NodeId, frame: &Frame) {
        let ok = match self.link(peer) {
            Some(link) if link.up.load(Ordering::SeqCst) => {
                let mut w = link.writer.lock().unwrap();
                match frame.write_to(&mut *w) {
                    Ok(()) => true,
                    Err(_) => {
                        link.up.store(false, Ordering::SeqCst);
                        false
                    }
                }
            }
            _ => false,
        };
        if !ok {
            self.failures.lock().unwrap().push(RelayFailure {
                src: frame.src,
                dst: frame.dst,
                failed_relay: peer,
                detected_at: self.id(),
                payload: hex::encode(&frame.payload),
            });
        }
    }

    fn deliver(&self, f: Frame) {
        self.delivered.lock().unwrap().push(Delivery {
            src: f.src,
            dst: f.dst,
            hop_count: f.hop_count,
            payload: hex::encode(&f.payload),
        });
    }

    fn on_frame(&self, mut f: Frame) {
        match self.role {
            Role::Hub => {
                let n = self.topology.n as NodeId;
                for j in (0..n).filter(|&j| j != f.src) {
                    let live = self.link(j).is_some_and(|l| l.up.load(Ordering::SeqCst));
                    if live {
                        self.transmit(j, &f);
                    } else if j == f.dst {
                        self.transmit(j, &f);
                    }
                }
            }
            Role::Node(id) if f.dst == id => self.deliver(f),
            Role::Node(_) if self.topology.kind == TopologyKind::Multicast => {
                // Overheard on the shared subnet; not ours.
            }
            Role::Node(id) => match self.topology.next_hop(id, f.dst) {
                Ok(next) => {
                    f.hop_count = f.hop_count.saturating_add(1);
                    self.transmit(next, &f);
                }
                Err(_) => {}
            },
        }
    }

    fn originate(&self, dst: NodeId, payload: Vec<u8>) -> Result<(), NetError> {
        let Role::Node(id) = self.role else {
            return Err(NetError::Protocol("the hub does not originate frames".into()));
        };
        if !self.topology.contains(dst) {
            return Err(NetError::NodeOutOfRange { node: dst, n: self.topology.n });
        }
        let mut f = Frame { src: id, dst, hop_count: 0, payload };
        if dst == id {
            self.deliver(f);
            return Ok(());
        }
        f.hop_count = 1;
        let next = if self.topology.kind == TopologyKind::Multicast { HUB } else { self.topology.next_hop(id, dst)? };
        self.transmit(next, &f);
        Ok(())
    }

    fn connect(
        self: &Arc<Self>,
        peers: &BTreeMap<NodeId, SocketAddr>,
        hub: Option<SocketAddr>,
    ) -> Result<(), NetError> {
        let id = self.id();
        let dial: Vec<(NodeId, SocketAddr)> = match (self.role, self.topology.kind) {
            (Role::Hub, _) => Vec::new(),
            (Role::Node(_), TopologyKind::Multicast) => {
                vec![(HUB, hub.ok_or_else(|| NetError::Protocol("multicast needs a hub address".into()))?)]
            }
            (Role::Node(_), _) => self
                .expected_links()
                .into_iter()
                .filter(|&nb| nb < id)
                .map(|nb| {
                    peers
                        .get(&nb)
                        .map(|a| (nb, *a))
                        .ok_or_else(|| NetError::Protocol(format!("no address for neighbor {nb}")))
                })
                .collect::<Result<_, _>>()?,
        };
        for (peer, addr) in dial {
            let mut stream = TcpStream::connect_timeout(&addr, Duration::from_secs(5))?;
            frame::write_hello(&mut stream, id)?;
            self.register(peer, stream)?;
        }
        Ok(())
    }

    fn handle(self: &Arc<Self>, req: ControlRequest) -> ControlResponse {
        let result = match req {
            ControlRequest::Connect { peers, hub } => self.connect(&peers, hub).map(|_| ControlResponse::Ok),
            ControlRequest::Links => {
                let links = self.links.lock().unwrap();
                let (mut up, mut down) = (Vec::new(), Vec::new());
                for nb in self.expected_links() {
                    match links.get(&nb) {
                        Some(l) if l.up.load(Ordering::SeqCst) => up.push(nb),
                        _ => down.push(nb),
                    }
                }
                Ok(ControlResponse::Links { up, down })
            }
            ControlRequest::Send { dst, payload } => hex::decode(&payload)
                .map_err(|e| NetError::Protocol(e.to_string()))
                .and_then(|p| self.originate(dst, p))
                .map(|_| ControlResponse::Ok),
            ControlRequest::Drain => Ok(ControlResponse::Drained {
                delivered: std::mem::take(&mut *self.delivered.lock().unwrap()),
                failures: std::mem::take(&mut *self.failures.lock().unwrap()),
            }),
            ControlRequest::Stats => Ok(ControlResponse::Stats { rx_frames: self.rx_frames.lock().unwrap().clone() }),
            ControlRequest::StartWork { units_per_sec } => {
                let mut w = self.work.lock().unwrap();
                *w = Work { units_per_sec, banked_secs: 0.0, running_since: Some(Instant::now()) };
                Ok(ControlResponse::Ok)
            }
            ControlRequest::Progress => Ok(ControlResponse::Progress { units: self.work.lock().unwrap().units() }),
            ControlRequest::Pause | ControlRequest::StopWork => {
                self.work.lock().unwrap().pause();
                Ok(ControlResponse::Ok)
            }
            ControlRequest::Resume => {
                let mut w = self.work.lock().unwrap();
                if w.running_since.is_none() {
                    w.running_since = Some(Instant::now());
                }
                Ok(ControlResponse::Ok)
            }
            ControlRequest::Exec { argv } => {
                let output = argv.join(" ");
                self.exec_log.lock().unwrap().push(argv);
                Ok(ControlResponse::Exec { exit_code: 0, output })
            }
            ControlRequest::Shutdown => {
                self.stop();
                Ok(ControlResponse::Ok)
            }
        };
        result.unwrap_or_else(|e| ControlResponse::Error { message: e.to_string() })
    }

    fn stop(&self) {
        self.shutdown.store(true, Ordering::SeqCst);
        for link in self.links.lock().unwrap().values() {
            link.up.store(false, Ordering::SeqCst);
            let _ = link.writer.lock().unwrap().shutdown(Shutdown::Both);
        }
        self.work.lock().unwrap().pause();
    }
}

fn accept_loop(listener: TcpListener, shared: Arc<Shared>, on_conn: impl Fn(&Arc<Shared>, TcpStream) + Send + 'static) {
    listener.set_nonblocking(true).expect("nonblocking listener");
    while !shared.shutdown.load(Ordering::SeqCst) {
        match listener.accept() {
            Ok((stream, _)) => {
                let _ = stream.set_nonblocking(false);
                on_conn(&shared, stream);
            }
            Err(e) if e.kind() == std::io::ErrorKind::WouldBlock => thread::sleep(Duration::from_millis(2)),
            Err(_) => thread::sleep(Duration::from_millis(2)),
        }
    }
}

fn serve_control(shared: Arc<Shared>, stream: TcpStream) {
    let Ok(writer) = stream.try_clone() else { return };
    let mut writer = writer;
    let reader = BufReader::new(stream);
    for line in reader.lines() {
        let Ok(line) = line else { break };
        if line.trim().is_empty() {
            continue;
        }
        let resp = match serde_json::from_str::<ControlRequest>(&line) {
            Ok(req) => shared.handle(req),
            Err(e) => ControlResponse::Error { message: format!("bad request: {e}") },
        };
        let mut out = serde_json::to_string(&resp).unwrap_or_else(|_| "{\"status\":\"error\"}".into());
        out.push('\n');
        if writer.write_all(out.as_bytes()).is_err() {
            break;
        }
        if shared.shutdown.load(Ordering::SeqCst) {
            break;
        }
    }
}

/// A running in-process agent.
pub struct AgentHandle {
    pub role: Role,
    pub addrs: AgentAddrs,
    shared: Arc<Shared>,
    threads: Vec<JoinHandle<()>>,
}

impl AgentHandle {
    pub fn is_stopped(&self) -> bool {
        self.shared.shutdown.load(Ordering::SeqCst)
    }

    /// Stops the agent abruptly, dropping every link.
    pub fn kill(&self) {
        self.shared.stop();
    }

    pub fn wait(mut self) {
        for t in self.threads.drain(..) {
            let _ = t.join();
        }
    }
}

impl Drop for AgentHandle {
    fn drop(&mut self) {
        self.shared.stop();
    }
}

/// Binds both sockets and starts the agent on background threads.
pub fn spawn(config: AgentConfig) -> Result<AgentHandle, NetError> {
    let mpi = TcpListener::bind((config.listen_ip, 0))?;
    let ctl = TcpListener::bind((config.listen_ip, 0))?;
    let addrs = AgentAddrs { mpi: mpi.local_addr()?, ctl: ctl.local_addr()? };
    let shared = Arc::new(Shared {
        role: config.role,
        topology: config.topology,
        links: Mutex::new(BTreeMap::new()),
        delivered: Mutex::default(),
        failures: Mutex::default(),
        rx_frames: Mutex::default(),
        work: Mutex::default(),
        exec_log: Mutex::default(),
        shutdown: AtomicBool::new(false),
    });

    let s1 = Arc::clone(&shared);
    let mpi_thread = thread::spawn(move || {
        accept_loop(mpi, s1, |shared, mut stream| {
            if let Ok(peer) = frame::read_hello(&mut stream) {
                let _ = shared.register(peer, stream);
            }
        })
    });
    let s2 = Arc::clone(&shared);
    let ctl_thread = thread::spawn(move || {
        accept_loop(ctl, s2, |shared, stream| {
            let me = Arc::clone(shared);
            thread::spawn(move || serve_control(me, stream));
        })
    });
    Ok(AgentHandle { role: config.role, addrs, shared, threads: vec![mpi_thread, ctl_thread] })
}

/// Runs an agent in the current process: prints the READY line to stdout
/// and blocks until a shutdown request arrives.
pub fn serve_forever(config: AgentConfig) -> Result<(), NetError> {
    let role = config.role;
    let handle = spawn(config)?;
    let mut out = std::io::stdout();
    writeln!(out, "{}", handle.addrs.ready_line(role))?;
    out.flush()?;
    while !handle.is_stopped() {
        thread::sleep(Duration::from_millis(5));
    }
    // Let the final control reply flush.
    thread::sleep(Duration::from_millis(20));
    Ok(())
}
