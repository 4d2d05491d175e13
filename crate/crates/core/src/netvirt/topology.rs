use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::model::NetworkSolution;

use super::NetError;

pub type NodeId = u16;

/// Overlay kinds for the MPI plane. `Flat` is the provider network of the
/// cloud backends: a full mesh where every pair is one hop apart.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TopologyKind {
    Multicast,
    P2pStar,
    P2pTree,
    Flat,
}

impl TopologyKind {
    pub const HPC: [TopologyKind; 3] = [TopologyKind::Multicast, TopologyKind::P2pStar, TopologyKind::P2pTree];

    pub fn is_p2p(self) -> bool {
        matches!(self, TopologyKind::P2pStar | TopologyKind::P2pTree)
    }
}

impl From<NetworkSolution> for TopologyKind {
    fn from(s: NetworkSolution) -> Self {
        match s {
            NetworkSolution::Multicast => TopologyKind::Multicast,
            NetworkSolution::P2pStar => TopologyKind::P2pStar,
            NetworkSolution::P2pTree => TopologyKind::P2pTree,
        }
    }
}

impl fmt::Display for TopologyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TopologyKind::Multicast => "multicast",
            TopologyKind::P2pStar => "p2p_star",
            TopologyKind::P2pTree => "p2p_tree",
            TopologyKind::Flat => "flat",
        })
    }
}

impl std::str::FromStr for TopologyKind {
    type Err = NetError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "multicast" => Ok(TopologyKind::Multicast),
            "p2p_star" | "star" => Ok(TopologyKind::P2pStar),
            "p2p_tree" | "tree" => Ok(TopologyKind::P2pTree),
            "flat" => Ok(TopologyKind::Flat),
            other => Err(NetError::UnknownKind(other.to_string())),
        }
    }
}

/// Overlay graph rooted at node 0, the master.
///
/// Edges are undirected and stored as `(low, high)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Topology {
    pub kind: TopologyKind,
    pub n: usize,
    pub edges: BTreeSet<(NodeId, NodeId)>,
}

impl Topology {
    pub const ROOT: NodeId = 0;

    pub fn build(kind: TopologyKind, n: usize) -> Result<Self, NetError> {
        if n == 0 {
            return Err(NetError::EmptyTopology);
        }
        if n > usize::from(NodeId::MAX) {
            return Err(NetError::TooManyNodes(n));
        }
        let n16 = n as NodeId;
        let edges = match kind {
            TopologyKind::Multicast => BTreeSet::new(),
            TopologyKind::P2pStar => (1..n16).map(|i| (0, i)).collect(),
            TopologyKind::P2pTree => (1..n16).map(|i| (parent(i), i)).collect(),
            TopologyKind::Flat => (0..n16).flat_map(|a| (a + 1..n16).map(move |b| (a, b))).collect(),
        };
        Ok(Self { kind, n, edges })
    }

    pub fn has_edge(&self, a: NodeId, b: NodeId) -> bool {
        self.edges.contains(&(a.min(b), a.max(b)))
    }

    pub fn contains(&self, id: NodeId) -> bool {
        usize::from(id) < self.n
    }

    /// Nodes this node holds a direct overlay link to.
    pub fn neighbors(&self, id: NodeId) -> Vec<NodeId> {
        self.edges
            .iter()
            .filter_map(|&(a, b)| {
                if a == id {
                    Some(b)
                } else if b == id {
                    Some(a)
                } else {
                    None
                }
            })
            .collect()
    }

    fn check(&self, id: NodeId) -> Result<(), NetError> {
        if self.contains(id) {
            Ok(())
        } else {
            Err(NetError::NodeOutOfRange { node: id, n: self.n })
        }
    }

    /// Path from `src` to `dst`, both endpoints included.
    pub fn route(&self, src: NodeId, dst: NodeId) -> Result<Vec<NodeId>, NetError> {
        self.check(src)?;
        self.check(dst)?;
        if src == dst {
            return Ok(vec![src]);
        }
        Ok(match self.kind {
            TopologyKind::Multicast | TopologyKind::Flat => vec![src, dst],
            TopologyKind::P2pStar => {
                if src == Self::ROOT || dst == Self::ROOT {
                    vec![src, dst]
                } else {
                    vec![src, Self::ROOT, dst]
                }
            }
            TopologyKind::P2pTree => tree_path(src, dst),
        })
    }

    /// Next node to hand a frame to when it sits at `at` bound for `dst`.
    pub fn next_hop(&self, at: NodeId, dst: NodeId) -> Result<NodeId, NetError> {
        let path = self.route(at, dst)?;
        Ok(path.get(1).copied().unwrap_or(at))
    }
}

fn parent(i: NodeId) -> NodeId {
    (i - 1) / 2
}

fn depth(mut i: NodeId) -> u32 {
    let mut d = 0;
    while i != 0 {
        i = parent(i);
        d += 1;
    }
    d
}

fn tree_path(src: NodeId, dst: NodeId) -> Vec<NodeId> {
    let (mut a, mut b) = (src, dst);
    let (mut da, mut db) = (depth(a), depth(b));
    let mut up = vec![a];
    let mut down = vec![b];
    while da > db {
        a = parent(a);
        da -= 1;
        up.push(a);
    }
    while db > da {
        b = parent(b);
        db -= 1;
        down.push(b);
    }
    while a != b {
        a = parent(a);
        b = parent(b);
        up.push(a);
        down.push(b);
    }
    // `a == b` is the lowest common ancestor, present at the end of both.
    down.pop();
    up.extend(down.into_iter().rev());
    up
}
