//! MPI-plane overlay networks: topology construction, routing, the wire
//! cost model, and live relay agents over TCP.

pub mod agent;
pub mod control;
pub mod cost;
pub mod frame;
pub mod overlay;
pub mod routing;
pub mod topology;

pub use cost::{all_pairs_trace, cost_of_trace, random_pairs_trace, CommCost, Link, Send};
pub use overlay::{Launcher, Overlay, SendOutcome};
pub use routing::RoutingTable;
pub use topology::{NodeId, Topology, TopologyKind};

#[derive(Debug, thiserror::Error)]
pub enum NetError {
    #[error("topology needs at least one node")]
    EmptyTopology,
    #[error("topology of {0} nodes exceeds the 16-bit node id space")]
    TooManyNodes(usize),
    #[error("node {node} out of range for topology of {n} nodes")]
    NodeOutOfRange { node: NodeId, n: usize },
    #[error("unknown topology kind {0:?}")]
    UnknownKind(String),
    #[error("node {0} is down")]
    NodeDown(NodeId),
    #[error("control connection closed")]
    ControlClosed,
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("agent error: {0}")]
    Remote(String),
    #[error("timed out: {0}")]
    Timeout(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
