mod common;

use std::sync::Arc;

use hbtm::HeartbeatTable;

#[test]
fn concurrent_writers_and_readers_never_tear() {
    let r = common::stress(8, 4, 100_000, 8);
    assert_eq!(r.written, 100_000);
    assert!(r.snapshots > 1000, "{r:?}");
    assert_eq!((r.torn, r.regressions, r.gaps), (0, 0, 0), "{r:?}");
    println!("{r:?}");
}

#[test]
fn tiny_windows_still_read_consistently() {
    let r = common::stress(4, 4, 40_000, 2);
    assert_eq!((r.torn, r.regressions, r.gaps), (0, 0, 0), "{r:?}");
}

#[test]
fn concurrent_registration_keeps_ring_a_permutation() {
    let table = Arc::new(HeartbeatTable::new(16));
    std::thread::scope(|s| {
        for t in 0..8u32 {
            let table = Arc::clone(&table);
            s.spawn(move || {
                for k in 0..16 {
                    let _ = table.register_thread(t * 16 + k).unwrap();
                }
            });
        }
    });
    let mut ring = table.ring_order();
    ring.sort_unstable();
    assert_eq!(ring, (0..128).collect::<Vec<_>>());
    table.mark_application_exited();
    assert!(table.register_thread(500).is_err());
}
