//! Compute and communication timing used by the simulated backends and the
//! scaling study.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::model::CommPattern;
use crate::netvirt::{cost_of_trace, CommCost, NodeId, Send, Topology, TopologyKind};
use crate::storage::MB;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerfProfile {
    /// Work units per second per core on bare hardware.
    pub cpu_rate: f64,
    pub cpu_overhead_fraction: f64,
    /// MB/s.
    pub net_bandwidth: f64,
    pub disk_read: f64,
    pub disk_write: f64,
    /// Store-and-forward cost per transmitted frame, seconds.
    pub hop_latency_s: f64,
}

impl PerfProfile {
    /// Work units per second delivered by `cores` cores.
    pub fn throughput(&self, cores: u32) -> f64 {
        f64::from(cores.max(1)) * self.cpu_rate * (1.0 - self.cpu_overhead_fraction)
    }
}

/// Seconds needed for `work` units on `cores` cores.
pub fn sim_compute(work: f64, cores: u32, perf: &PerfProfile) -> f64 {
    if work <= 0.0 {
        return 0.0;
    }
    work / perf.throughput(cores)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScalingParams {
    pub pattern: CommPattern,
    pub work_total: f64,
    /// Communication rounds per run; every process sends once per round.
    pub rounds: usize,
    pub message_bytes: u64,
    pub seed: u64,
}

impl Default for ScalingParams {
    fn default() -> Self {
        Self {
            pattern: CommPattern::OneToOneHeavy,
            work_total: 100_000.0,
            rounds: 50,
            message_bytes: 1 << 20,
            seed: 42,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingRow {
    pub processes: usize,
    pub topology: TopologyKind,
    pub compute_s: f64,
    pub comm_s: f64,
    pub runtime_s: f64,
    pub speedup: f64,
    pub messages_on_wire: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ScalingError {
    #[error("process count {0} is not a power of two")]
    NotPowerOfTwo(usize),
    #[error("process count {0} exceeds the overlay limit")]
    TooLarge(usize),
}

/// Sends of one round. Broadcasts stay a single send on the multicast
/// subnet and expand to `n - 1` unicasts on every other overlay.
fn round_trace(n: usize, ratio: f64, kind: TopologyKind, bytes: u64, rng: &mut ChaCha8Rng) -> Vec<Send> {
    let mut out = Vec::new();
    for src in 0..n as NodeId {
        let one_to_one = rng.gen_bool(ratio.clamp(0.0, 1.0));
        let partner = {
            let d = rng.gen_range(0..n as NodeId - 1);
            if d >= src {
                d + 1
            } else {
                d
            }
        };
        if one_to_one {
            out.push(Send { src, dst: partner, bytes });
        } else if kind == TopologyKind::Multicast {
            out.push(Send { src, dst: partner, bytes });
        } else {
            out.extend((0..n as NodeId).filter(|&d| d != src).map(|dst| Send { src, dst, bytes }));
        }
    }
    out
}

/// Seconds one round occupies the network. The multicast hub repeats every
/// delivery on a shared medium; point-to-point nodes transmit in parallel,
/// so the busiest node sets the pace.
pub fn round_time(cost: &CommCost, kind: TopologyKind, perf: &PerfProfile) -> f64 {
    let bw = perf.net_bandwidth * MB;
    match kind {
        TopologyKind::Multicast => cost.bytes_on_wire as f64 / bw + cost.messages_on_wire as f64 * perf.hop_latency_s,
        _ => cost
            .per_node_tx_bytes
            .iter()
            .map(|(node, &bytes)| {
                let frames = cost.per_node_tx_frames.get(node).copied().unwrap_or(0);
                bytes as f64 / bw + frames as f64 * perf.hop_latency_s
            })
            .fold(0.0, f64::max),
    }
}

fn run_once(n: usize, kind: TopologyKind, params: &ScalingParams, perf: &PerfProfile) -> (f64, f64, u64) {
    let compute = sim_compute(params.work_total, n as u32, perf);
    if n < 2 {
        return (compute, 0.0, 0);
    }
    let topo = Topology::build(kind, n).expect("valid process count");
    // Same draws for every overlay at a given size.
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed ^ (n as u64).rotate_left(32));
    let mut comm = 0.0;
    let mut wire = 0;
    for _ in 0..params.rounds {
        let trace = round_trace(n, params.pattern.one_to_one_ratio(), kind, params.message_bytes, &mut rng);
        let cost = cost_of_trace(&topo, &trace).expect("in-range trace");
        comm += round_time(&cost, kind, perf);
        wire += cost.messages_on_wire;
    }
    (compute, comm, wire)
}

/// Simulated runtime and speedup over one process for each process count.
pub fn replay_scaling(
    params: &ScalingParams,
    perf: &PerfProfile,
    kind: TopologyKind,
    process_counts: &[usize],
) -> Result<Vec<ScalingRow>, ScalingError> {
    let (base, _, _) = run_once(1, kind, params, perf);
    process_counts
        .iter()
        .map(|&n| {
            if !n.is_power_of_two() {
                return Err(ScalingError::NotPowerOfTwo(n));
            }
            if n >= usize::from(NodeId::MAX) {
                return Err(ScalingError::TooLarge(n));
            }
            let (compute_s, comm_s, messages_on_wire) = run_once(n, kind, params, perf);
            let runtime_s = compute_s + comm_s;
            Ok(ScalingRow {
                processes: n,
                topology: kind,
                compute_s,
                comm_s,
                runtime_s,
                speedup: base / runtime_s,
                messages_on_wire,
            })
        })
        .collect()
}
