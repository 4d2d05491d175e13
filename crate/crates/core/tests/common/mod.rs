#![allow(dead_code)]

use bee_core::backends::{BackendConfig, SimCosts};
use bee_core::model::{
    AppSpec, CommPattern, ComputeSystem, ContainerSource, DiskBandwidth, HardwareConfig, Host, IoProfile,
    NetworkSolution, ResourcePool, StorageSolution, SystemKind,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn system(id: &str, hosts: usize, time_slot: f64) -> ComputeSystem {
    ComputeSystem {
        id: id.into(),
        kind: SystemKind::Hpc,
        hosts: (0..hosts).map(|i| Host::new(format!("{id}-h{i}"))).collect(),
        time_slot,
        kvm_available: true,
        host_file_sharing: true,
        net_bandwidth_native: 1000.0,
        disk_bandwidth_native: DiskBandwidth { read: 1000.0, write: 800.0 },
        cpu_rate_native: 1.0,
        nfs_cap: 125.0,
    }
}

pub fn app(process_count: u32, work_total: u64) -> AppSpec {
    AppSpec {
        name: "toy".into(),
        container_source: ContainerSource::ImageRef("registry.local/toy:1".into()),
        entry_command: vec!["mpirun".into(), "toy".into()],
        process_count,
        comm_pattern: CommPattern::OneToOneHeavy,
        work_total,
        io_profile: IoProfile::default(),
        checkpointable: true,
    }
}

pub fn uconf(vcpus: u32, net: NetworkSolution) -> HardwareConfig {
    HardwareConfig {
        vcpus,
        ram_mb: 4096,
        network_solution: net,
        storage_solution: StorageSolution::VirtioPassthrough,
        ssh_base_port: 10022,
    }
}

pub fn zero_costs() -> SimCosts {
    SimCosts {
        register_host: 0.0,
        create_vm: 0.0,
        create_img: 0.0,
        configure: 0.0,
        setup_shared_vol: 0.0,
        setup_network: 0.0,
        register_vm: 0.0,
        vm_boot: 0.0,
        create_docker: 0.0,
        image_size_mb: 0.0,
        build_step: 0.0,
        build_steps: 0,
        container_start: 0.0,
        app_start: 0.0,
        image_step: 0.0,
        jitter: 0.0,
    }
}

/// Sim config with free deployment and no virtualization overhead.
pub fn ideal_config() -> BackendConfig {
    BackendConfig { costs: zero_costs(), cpu_overhead_fraction: Some(0.0), ..BackendConfig::default() }
}

pub struct Scenario {
    pub pool: ResourcePool,
    pub app: AppSpec,
    pub uconf: HardwareConfig,
    pub data: Vec<u8>,
    pub config: BackendConfig,
}

/// A seeded random pool/app pair for the sim backends. Work is sized
/// between half a slot and about four slots' worth so runs complete,
/// migrate and stall in roughly equal measure.
pub fn scenario(seed: u64) -> Scenario {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pc = 1u32 << rng.gen_range(0..3);
    let n_sys = rng.gen_range(1..=4);
    let systems: Vec<ComputeSystem> = (0..n_sys)
        .map(|i| {
            let mut s = system(&format!("s{i}"), pc as usize + rng.gen_range(0..2), rng.gen_range(300.0..1200.0));
            s.cpu_rate_native = rng.gen_range(0.5..2.0);
            s.net_bandwidth_native = rng.gen_range(100.0..2000.0);
            s.disk_bandwidth_native.write = rng.gen_range(200.0..1000.0);
            if rng.gen_bool(0.3) {
                s.kind = SystemKind::CloudAwsLike;
                s.kvm_available = false;
            }
            s
        })
        .collect();
    let vcpus = rng.gen_range(1..=2);
    let rate = (pc * vcpus) as f64;
    let work = (rate * rng.gen_range(200.0..3000.0)) as u64 + 1;
    let mut app = app(pc, work);
    app.io_profile.write_bytes_per_slot = rng.gen_range(0..64) << 20;
    let net = match rng.gen_range(0..3) {
        0 => NetworkSolution::Multicast,
        1 => NetworkSolution::P2pStar,
        _ => NetworkSolution::P2pTree,
    };
    let data: Vec<u8> = (0..rng.gen_range(0..4096)).map(|_| rng.gen()).collect();
    let config = BackendConfig { seed, ..BackendConfig::default() };
    Scenario { pool: ResourcePool { systems }, app, uconf: uconf(vcpus, net), data, config }
}
