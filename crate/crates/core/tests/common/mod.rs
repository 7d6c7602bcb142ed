#![allow(dead_code)]

use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use hbtm::HeartbeatTable;

#[derive(Debug, Default)]
pub struct StressReport {
    pub written: u64,
    pub snapshots: u64,
    pub records_checked: u64,
    /// Records whose fields do not all come from the same emission.
    pub torn: u64,
    /// A later snapshot of a thread showed a smaller last_seq_no.
    pub regressions: u64,
    /// Holes or reordering inside one snapshot's window.
    pub gaps: u64,
}

// Every field is a function of (thread, seq_no), so a mix of two emissions is detectable.
fn stamp(thread: u32, seq: u64) -> (u64, u32, u64) {
    (seq * 1_000 + thread as u64, thread * 7 + (seq % 5) as u32, seq.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ thread as u64)
}

/// `writers` threads share `total` heartbeats while `readers` threads keep
/// snapshotting random sequences of a small-window table.
pub fn stress(writers: u32, readers: u32, total: u64, capacity: usize) -> StressReport {
    let table = Arc::new(HeartbeatTable::new(capacity));
    let handles: Vec<_> = (0..writers).map(|t| table.register_thread(t).unwrap()).collect();
    let per_writer = total / writers as u64;
    let done = Arc::new(AtomicBool::new(false));
    std::thread::scope(|s| {
        let reader_threads: Vec<_> = (0..readers)
            .map(|r| {
                let table = Arc::clone(&table);
                let done = Arc::clone(&done);
                s.spawn(move || {
                    let mut report = StressReport::default();
                    let mut last_seen = vec![0u64; writers as usize];
                    let mut k = r as usize;
                    loop {
                        let finished = done.load(Ordering::Acquire);
                        let t = (k % writers as usize) as u32;
                        k = k.wrapping_mul(31).wrapping_add(17);
                        let seq = table.read_sequence(t).unwrap();
                        report.snapshots += 1;
                        if seq.last_seq_no < last_seen[t as usize] {
                            report.regressions += 1;
                        }
                        last_seen[t as usize] = seq.last_seq_no;
                        for w in seq.records.windows(2) {
                            if w[1].seq_no != w[0].seq_no + 1 || w[1].timestamp_ns < w[0].timestamp_ns {
                                report.gaps += 1;
                            }
                        }
                        for hb in &seq.records {
                            report.records_checked += 1;
                            let want = stamp(t, hb.seq_no);
                            if hb.thread_id != t || (hb.timestamp_ns, hb.loop_id, hb.iteration) != want {
                                report.torn += 1;
                            }
                            if hb.seq_no > seq.last_seq_no {
                                report.gaps += 1;
                            }
                        }
                        if finished {
                            return report;
                        }
                        if report.snapshots % 64 == 0 {
                            std::thread::yield_now();
                        }
                    }
                })
            })
            .collect();
        let writer_threads: Vec<_> = handles
            .iter()
            .map(|h| {
                s.spawn(move || {
                    for seq in 1..=per_writer {
                        let (ts, loop_id, iteration) = stamp(h.thread_id(), seq);
                        assert_eq!(h.record(loop_id, iteration, ts).unwrap(), seq);
                        if seq % 64 == 0 {
                            std::thread::yield_now();
                        }
                    }
                    per_writer
                })
            })
            .collect();
        let written: u64 = writer_threads.into_iter().map(|w| w.join().unwrap()).sum();
        done.store(true, Ordering::Release);
        let mut total = StressReport { written, ..StressReport::default() };
        for r in reader_threads {
            let r = r.join().unwrap();
            total.snapshots += r.snapshots;
            total.records_checked += r.records_checked;
            total.torn += r.torn;
            total.regressions += r.regressions;
            total.gaps += r.gaps;
        }
        total
    })
}
