use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::topology::{NodeId, Topology};

/// Precomputed paths for every ordered pair of nodes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoutingTable {
    pub n: usize,
    paths: BTreeMap<(NodeId, NodeId), Vec<NodeId>>,
}

impl RoutingTable {
    pub fn build(topo: &Topology) -> Self {
        let n = topo.n as NodeId;
        let mut paths = BTreeMap::new();
        for src in 0..n {
            for dst in 0..n {
                // Both ids are in range by construction.
                let path = topo.route(src, dst).expect("in-range route");
                paths.insert((src, dst), path);
            }
        }
        Self { n: topo.n, paths }
    }

    pub fn path(&self, src: NodeId, dst: NodeId) -> Option<&[NodeId]> {
        self.paths.get(&(src, dst)).map(Vec::as_slice)
    }

    pub fn hops(&self, src: NodeId, dst: NodeId) -> Option<usize> {
        self.path(src, dst).map(|p| p.len() - 1)
    }

    pub fn next_hop(&self, at: NodeId, dst: NodeId) -> Option<NodeId> {
        self.path(at, dst).map(|p| p.get(1).copied().unwrap_or(at))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&(NodeId, NodeId), &Vec<NodeId>)> {
        self.paths.iter()
    }
}
