//! Wire-cost accounting for message traces replayed on an overlay.
//!
//! Multicast puts every send on the shared subnet, so one send costs `n - 1`
//! deliveries whatever its destination. Point-to-point overlays pay one
//! transmission per hop and charge every interior node on the path a unit
//! of relay load.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::topology::{NodeId, Topology, TopologyKind};
use super::NetError;

/// One application-level send.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Send {
    pub src: NodeId,
    pub dst: NodeId,
    pub bytes: u64,
}

/// A physical carrier that frames cross: an overlay edge, or the hub's
/// delivery link to one node on the multicast subnet.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Link {
    Edge(NodeId, NodeId),
    Hub(NodeId),
}

impl Link {
    pub fn edge(a: NodeId, b: NodeId) -> Self {
        Link::Edge(a.min(b), a.max(b))
    }
}

impl fmt::Display for Link {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Link::Edge(a, b) => write!(f, "{a}-{b}"),
            Link::Hub(n) => write!(f, "hub-{n}"),
        }
    }
}

impl FromStr for Link {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || format!("bad link {s:?}");
        let (a, b) = s.split_once('-').ok_or_else(bad)?;
        if a == "hub" {
            return b.parse().map(Link::Hub).map_err(|_| bad());
        }
        Ok(Link::edge(a.parse().map_err(|_| bad())?, b.parse().map_err(|_| bad())?))
    }
}

impl Serialize for Link {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Link {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct CommCost {
    pub messages_on_wire: u64,
    pub total_hops: u64,
    pub bytes_on_wire: u64,
    pub per_node_relay_load: BTreeMap<NodeId, u64>,
    /// Bytes each node puts on its own uplink (sends plus forwards).
    pub per_node_tx_bytes: BTreeMap<NodeId, u64>,
    pub per_node_tx_frames: BTreeMap<NodeId, u64>,
    pub per_link: BTreeMap<Link, u64>,
    /// Sends bucketed by hop count.
    pub hop_histogram: BTreeMap<usize, u64>,
}

impl CommCost {
    pub fn max_relay_load(&self) -> u64 {
        self.per_node_relay_load.values().copied().max().unwrap_or(0)
    }

    pub fn max_tx_bytes(&self) -> u64 {
        self.per_node_tx_bytes.values().copied().max().unwrap_or(0)
    }
}

/// Replays `trace` on `topo`. Every endpoint must be a node of the topology.
pub fn cost_of_trace(topo: &Topology, trace: &[Send]) -> Result<CommCost, NetError> {
    let n = topo.n as NodeId;
    let mut cost = CommCost {
        per_node_relay_load: (0..n).map(|i| (i, 0)).collect(),
        per_node_tx_bytes: (0..n).map(|i| (i, 0)).collect(),
        per_node_tx_frames: (0..n).map(|i| (i, 0)).collect(),
        ..CommCost::default()
    };
    for send in trace {
        let path = topo.route(send.src, send.dst)?;
        match topo.kind {
            TopologyKind::Multicast => {
                let deliveries = (n - 1) as u64;
                cost.messages_on_wire += deliveries;
                cost.bytes_on_wire += deliveries * send.bytes;
                let steps = usize::from(n > 1);
                cost.total_hops += steps as u64;
                *cost.hop_histogram.entry(steps).or_default() += 1;
                if n > 1 {
                    *cost.per_node_tx_bytes.entry(send.src).or_default() += send.bytes;
                    *cost.per_node_tx_frames.entry(send.src).or_default() += 1;
                }
                for j in (0..n).filter(|&j| j != send.src) {
                    *cost.per_link.entry(Link::Hub(j)).or_default() += 1;
                }
            }
            TopologyKind::P2pStar | TopologyKind::P2pTree | TopologyKind::Flat => {
                let hops = path.len() - 1;
                cost.messages_on_wire += hops as u64;
                cost.total_hops += hops as u64;
                cost.bytes_on_wire += hops as u64 * send.bytes;
                *cost.hop_histogram.entry(hops).or_default() += 1;
                for w in path.windows(2) {
                    *cost.per_link.entry(Link::edge(w[0], w[1])).or_default() += 1;
                    *cost.per_node_tx_bytes.entry(w[0]).or_default() += send.bytes;
                    *cost.per_node_tx_frames.entry(w[0]).or_default() += 1;
                }
                if path.len() > 2 {
                    for relay in &path[1..path.len() - 1] {
                        *cost.per_node_relay_load.entry(*relay).or_default() += 1;
                    }
                }
            }
        }
    }
    Ok(cost)
}

/// Every ordered pair `(i, j)` with `i != j`, once.
pub fn all_pairs_trace(n: usize, bytes: u64) -> Vec<Send> {
    let n = n as NodeId;
    (0..n).flat_map(|src| (0..n).filter(move |&dst| dst != src).map(move |dst| Send { src, dst, bytes })).collect()
}

/// `count` uniformly random pairs with distinct endpoints.
pub fn random_pairs_trace(n: usize, count: usize, seed: u64, bytes: u64) -> Vec<Send> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = n as NodeId;
    (0..count)
        .map(|_| {
            if n < 2 {
                return Send { src: 0, dst: 0, bytes };
            }
            let src = rng.gen_range(0..n);
            let mut dst = rng.gen_range(0..n - 1);
            if dst >= src {
                dst += 1;
            }
            Send { src, dst, bytes }
        })
        .collect()
}
