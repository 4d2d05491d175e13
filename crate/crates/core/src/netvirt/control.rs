//! Control plane for agents: newline-delimited JSON request/response over a
//! dedicated TCP socket, kept apart from the MPI-plane frame links.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Write};
use std::net::{SocketAddr, TcpStream};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::topology::NodeId;
use super::NetError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "cmd", rename_all = "snake_case")]
pub enum ControlRequest {
    /// Dial the lower-numbered neighbors (or the hub) at these addresses.
    Connect {
        #[serde(with = "pairs")]
        peers: BTreeMap<NodeId, SocketAddr>,
        hub: Option<SocketAddr>,
    },
    Links,
    Send {
        dst: NodeId,
        payload: String,
    },
    Drain,
    Stats,
    StartWork {
        units_per_sec: f64,
    },
    Progress,
    Pause,
    Resume,
    StopWork,
    Exec {
        argv: Vec<String>,
    },
    Shutdown,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Delivery {
    pub src: NodeId,
    pub dst: NodeId,
    pub hop_count: u16,
    pub payload: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelayFailure {
    pub src: NodeId,
    pub dst: NodeId,
    /// Node the frame could not be handed to.
    pub failed_relay: NodeId,
    /// Node that detected the broken link.
    pub detected_at: NodeId,
    pub payload: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum ControlResponse {
    Ok,
    Links {
        up: Vec<NodeId>,
        down: Vec<NodeId>,
    },
    Drained {
        delivered: Vec<Delivery>,
        failures: Vec<RelayFailure>,
    },
    Stats {
        #[serde(with = "pairs")]
        rx_frames: BTreeMap<NodeId, u64>,
    },
    Progress {
        units: u64,
    },
    Exec {
        exit_code: i32,
        output: String,
    },
    Error {
        message: String,
    },
}

// Node-keyed maps travel as [[id, value], ...]: integer map keys do not
// survive the buffering that internally tagged enums do.
mod pairs {
    use std::collections::BTreeMap;

    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    use super::NodeId;

    pub fn serialize<S: Serializer, V: Serialize>(m: &BTreeMap<NodeId, V>, s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(m.iter())
    }

    pub fn deserialize<'de, D: Deserializer<'de>, V: Deserialize<'de>>(d: D) -> Result<BTreeMap<NodeId, V>, D::Error> {
        Vec::<(NodeId, V)>::deserialize(d).map(|v| v.into_iter().collect())
    }
}

/// Blocking client for one agent's control socket.
pub struct ControlClient {
    reader: BufReader<TcpStream>,
    writer: TcpStream,
}

impl ControlClient {
    pub fn connect(addr: SocketAddr) -> Result<Self, NetError> {
        let stream = TcpStream::connect_timeout(&addr, Duration::from_secs(5))?;
        stream.set_read_timeout(Some(Duration::from_secs(10)))?;
        stream.set_nodelay(true)?;
        let writer = stream.try_clone()?;
        Ok(Self { reader: BufReader::new(stream), writer })
    }

    pub fn request(&mut self, req: &ControlRequest) -> Result<ControlResponse, NetError> {
        let mut line = serde_json::to_string(req).map_err(|e| NetError::Protocol(e.to_string()))?;
        line.push('\n');
        self.writer.write_all(line.as_bytes())?;
        let mut reply = String::new();
        if self.reader.read_line(&mut reply)? == 0 {
            return Err(NetError::ControlClosed);
        }
        let resp: ControlResponse =
            serde_json::from_str(reply.trim_end()).map_err(|e| NetError::Protocol(e.to_string()))?;
        match resp {
            ControlResponse::Error { message } => Err(NetError::Remote(message)),
            other => Ok(other),
        }
    }
}
