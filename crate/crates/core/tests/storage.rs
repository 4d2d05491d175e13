use bee_core::storage::{
    attach_volume, detach_volume, digest_hex, ior_benchmark, model_io, snapshot_volume, CheckpointStore, IoOp,
    Manifest, StorageError, StorageKind, StoragePlan, Volume, VolumeStore, MB,
};
use proptest::prelude::*;

const GIB: u64 = 1 << 30;

fn plan(solution: StorageKind, system: &str, nodes: usize, read: f64, write: f64) -> StoragePlan {
    StoragePlan {
        solution,
        system_id: system.into(),
        nodes,
        master_node: Some(0),
        mount_path: "/bee/data".into(),
        native_read: read,
        native_write: write,
        nfs_cap: 125.0,
    }
}

#[test]
fn model_io_examples() {
    let virtio = plan(StorageKind::VirtioPassthrough, "a", 1, 1000.0, 500.0);
    let t = model_io(&virtio, 0, IoOp::Write, GIB, 0).unwrap();
    assert!((t - 1024.0 / 450.0).abs() < 1e-12);

    let nfs = plan(StorageKind::DataImageNfs, "a", 2, 1000.0, 800.0);
    let t = model_io(&nfs, 1, IoOp::Read, GIB, 1).unwrap();
    assert!((t - 1024.0 / 125.0).abs() < 1e-12);

    assert_eq!(model_io(&nfs, 1, IoOp::Write, 0, 1).unwrap(), 0.0);
}

#[test]
fn nfs_worker_aggregate_is_flat() {
    for n in 2..=32 {
        let row = ior_benchmark(&plan(StorageKind::DataImageNfs, "a", n, 1000.0, 800.0), GIB).unwrap();
        for phase in [&row.write, &row.read] {
            let agg = phase.worker_aggregate.unwrap();
            assert!((120.0..=130.0).contains(&agg), "n={n}: {agg}");
        }
    }
}

#[test]
fn volume_moves_keep_content() {
    let a = plan(StorageKind::VirtioPassthrough, "A", 2, 1000.0, 800.0);
    let b = plan(StorageKind::DataImageNfs, "B", 2, 1000.0, 800.0);
    let mut v = Volume::new("vol", b"payload".to_vec());
    let digest = v.digest().to_string();
    attach_volume(&a, &mut v).unwrap();
    assert!(matches!(attach_volume(&b, &mut v), Err(StorageError::AlreadyAttached { .. })));
    detach_volume(&a, &mut v).unwrap();
    attach_volume(&b, &mut v).unwrap();
    assert_eq!(v.location(), "B");
    assert_eq!(v.digest(), digest);
    detach_volume(&b, &mut v).unwrap();
    attach_volume(&b, &mut v).unwrap();
    assert_eq!(v.bytes(), b"payload");
}

#[test]
fn snapshot_isolation() {
    let p = plan(StorageKind::VirtioPassthrough, "A", 1, 1000.0, 800.0);
    let mut v = Volume::new("vol", b"one".to_vec());
    attach_volume(&p, &mut v).unwrap();
    let s1 = snapshot_volume(&v).unwrap();
    let s2 = snapshot_volume(&v).unwrap();
    assert_eq!(s1.digest, s2.digest);
    v.append(b"two");
    assert_eq!(s1.digest, digest_hex(b"one"));
    assert_ne!(v.digest(), s1.digest);

    let mut empty = Volume::new("e", Vec::new());
    attach_volume(&p, &mut empty).unwrap();
    assert_eq!(snapshot_volume(&empty).unwrap().digest, digest_hex(b""));
}

#[test]
fn volume_store_layout() {
    let dir = tempfile::tempdir().unwrap();
    let mut store = VolumeStore::open(dir.path()).unwrap();
    store.save(&Volume::new("v1", b"abc".to_vec())).unwrap();
    let base = dir.path().join("volumes").join("v1");
    assert_eq!(std::fs::read(base.join("data.bin")).unwrap(), b"abc");
    assert!(base.join("meta.json").exists());
    assert_eq!(store.load("v1").unwrap().digest(), digest_hex(b"abc"));
}

#[test]
fn checkpoint_store_layout_and_tamper() {
    let dir = tempfile::tempdir().unwrap();
    let store = CheckpointStore::open(dir.path()).unwrap();
    let bytes = b"state".to_vec();
    let m = Manifest {
        run_id: "r1".into(),
        seq: 2,
        progress: 7,
        digest: digest_hex(&bytes),
        origin_system: "A".into(),
        created_at: 1.5,
    };
    let path = store.write(&m, &bytes).unwrap();
    assert_eq!(path, dir.path().join("r1").join("2").join("manifest.json"));
    assert_eq!(CheckpointStore::read(&path).unwrap().manifest, m);
    assert_eq!(store.latest("r1").unwrap().unwrap().manifest.seq, 2);

    std::fs::write(dir.path().join("r1/2/volume.bin"), b"tampered").unwrap();
    assert!(matches!(CheckpointStore::read(&path), Err(StorageError::CheckpointCorrupt { .. })));
}

fn op() -> impl Strategy<Value = IoOp> {
    prop_oneof![Just(IoOp::Read), Just(IoOp::Write)]
}

proptest! {
    #[test]
    fn nfs_aggregate_never_exceeds_cap(n in 1usize..=32, read in 10.0f64..5000.0, write in 10.0f64..5000.0, cap in 10.0f64..500.0) {
        let mut p = plan(StorageKind::DataImageNfs, "a", n, read, write);
        p.nfs_cap = cap;
        let row = ior_benchmark(&p, GIB).unwrap();
        for phase in [&row.write, &row.read] {
            if let Some(agg) = phase.worker_aggregate {
                prop_assert!(agg <= cap * (1.0 + 1e-12));
            }
        }
    }

    // Native disks at least as fast as the export cap, as on the measured systems.
    #[test]
    fn virtio_never_slower_than_nfs_workers(n in 2usize..=32, read in 139.0f64..5000.0, write in 139.0f64..5000.0, o in op()) {
        let v = plan(StorageKind::VirtioPassthrough, "a", n, read, write);
        let d = plan(StorageKind::DataImageNfs, "a", n, read, write);
        for node in 1..n as u16 {
            let vb = v.effective_bw(node, o, n - 1).unwrap();
            let db = d.effective_bw(node, o, n - 1).unwrap();
            prop_assert!(vb >= db);
        }
    }

    #[test]
    fn virtio_ratios(read in 1.0f64..1e5, write in 1.0f64..1e5) {
        let v = plan(StorageKind::VirtioPassthrough, "a", 1, read, write);
        prop_assert!((v.effective_bw(0, IoOp::Read, 0).unwrap() / read - 1.0).abs() <= 1e-9);
        prop_assert!((v.effective_bw(0, IoOp::Write, 0).unwrap() / (0.9 * write) - 1.0).abs() <= 1e-9);
    }

    #[test]
    fn moves_preserve_and_writes_change_digest(data in proptest::collection::vec(any::<u8>(), 0..512), extra in proptest::collection::vec(any::<u8>(), 1..64), hops in 1usize..6) {
        let mut v = Volume::new("v", data.clone());
        let mut prev: Option<StoragePlan> = None;
        for i in 0..hops {
            let p = plan(StorageKind::VirtioPassthrough, &format!("s{i}"), 1, 100.0, 100.0);
            if let Some(old) = &prev {
                detach_volume(old, &mut v).unwrap();
            }
            attach_volume(&p, &mut v).unwrap();
            prev = Some(p);
        }
        prop_assert_eq!(v.digest(), digest_hex(&data));
        v.append(&extra);
        prop_assert_ne!(v.digest(), digest_hex(&data));
        prop_assert!(v.verify());
    }

    #[test]
    fn io_time_is_bytes_over_bandwidth(bytes in 0u64..(1 << 34), bw in 1.0f64..1e4) {
        let p = plan(StorageKind::NativeShared, "a", 1, bw, bw);
        let t = model_io(&p, 0, IoOp::Read, bytes, 0).unwrap();
        prop_assert!((t - bytes as f64 / MB / bw).abs() <= 1e-9 * t.max(1.0));
    }
}
