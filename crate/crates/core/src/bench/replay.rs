//! Frozen-trace analysis: detectors run against a persisted table at
//! scripted timestamps, so counts and states are exactly reproducible.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::metrics::{count_queries, median, QueryCounts};
use super::BenchError;
use crate::config::{MonitorConfig, MonitorMode};
use crate::detect::{
    CentralizedMonitor, Classifier, DecentralizedMonitor, DetectionContext, DetectionEvent, LivenessOracle,
};
use crate::heartbeat::{Heartbeat, HeartbeatTable, SequenceSnapshot, TableSnapshot};

/// How a synthetic thread stops beating.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TraceStop {
    pub thread_id: u32,
    pub at_ms: u64,
    /// With an exit marker (Exit) or without (Failure / blocked).
    pub exit_marker: bool,
}

/// `threads` threads beating at `beats_per_s` from time `base_ns` for
/// `duration_ms`, each interval jittered by up to ±10% from a seeded
/// generator.
pub fn synthetic_trace(
    threads: u32,
    beats_per_s: f64,
    duration_ms: u64,
    base_ns: u64,
    seed: u64,
    stops: &[TraceStop],
) -> TableSnapshot {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let interval = 1e9 / beats_per_s;
    let horizon = base_ns + duration_ms * 1_000_000;
    let sequences = (0..threads)
        .map(|t| {
            let stop = stops.iter().find(|s| s.thread_id == t);
            let end = stop.map_or(horizon, |s| base_ns + s.at_ms * 1_000_000).min(horizon);
            let mut seq = SequenceSnapshot::new(t);
            let mut ts = base_ns as f64;
            let mut k = 1;
            while (ts as u64) <= end {
                seq.records.push(Heartbeat {
                    thread_id: t,
                    seq_no: k,
                    timestamp_ns: ts as u64,
                    loop_id: 1,
                    iteration: k - 1,
                });
                k += 1;
                ts += interval * rng.gen_range(0.9..1.1);
            }
            seq.started = true;
            seq.exited = stop.is_some_and(|s| s.exit_marker);
            seq.last_seq_no = seq.records.len() as u64;
            seq
        })
        .collect();
    TableSnapshot { ring_order: (0..threads).collect(), sequences }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplayResult {
    pub mode: MonitorMode,
    pub periods: u64,
    pub events: Vec<DetectionEvent>,
    pub queries: QueryCounts,
}

/// First and last record timestamps in the trace.
pub fn trace_bounds(snapshot: &TableSnapshot) -> Option<(u64, u64)> {
    let ts = snapshot.sequences.iter().flat_map(|s| s.records.iter().map(|r| r.timestamp_ns));
    let (lo, hi) = ts.fold((u64::MAX, 0), |(lo, hi), t| (lo.min(t), hi.max(t)));
    (lo <= hi).then_some((lo, hi))
}

/// Median per-thread heart rate over each thread's recorded span.
pub fn estimate_heart_rate(snapshot: &TableSnapshot) -> Option<f64> {
    let rates: Vec<f64> = snapshot
        .sequences
        .iter()
        .filter(|s| s.records.len() >= 2)
        .filter_map(|s| {
            let span = s.records.last()?.timestamp_ns - s.records.first()?.timestamp_ns;
            (span > 0).then(|| (s.records.len() - 1) as f64 * 1e9 / span as f64)
        })
        .collect();
    median(&rates)
}

/// Replay start that gives every thread a full rate window of history, or
/// the last record for traces shorter than one window.
pub fn default_start(snapshot: &TableSnapshot, config: &MonitorConfig) -> u64 {
    trace_bounds(snapshot).map_or(0, |(lo, hi)| (lo + config.rate_window_ns()).min(hi))
}

/// Periods from `start_ns` until a stall after the last record would be
/// visible, so threads that went quiet at the end still get a verdict.
pub fn periods_available(snapshot: &TableSnapshot, config: &MonitorConfig, start_ns: u64) -> u64 {
    match trace_bounds(snapshot) {
        Some((_, hi)) if hi >= start_ns => (hi + config.stall_ns() + 2 * config.period_ns() - start_ns) / config.period_ns() + 1,
        _ => 0,
    }
}

/// Runs `periods` detection periods starting at `start_ns` over a frozen
/// table. In decentralized mode a worker takes its turn only while it is
/// itself Running or BusyWaiting at that instant.
pub fn replay(
    snapshot: &TableSnapshot,
    config: MonitorConfig,
    liveness: Arc<dyn LivenessOracle>,
    start_ns: u64,
    periods: u64,
) -> Result<ReplayResult, BenchError> {
    config.validate()?;
    let capacity = snapshot
        .sequences
        .iter()
        .map(|s| s.records.len())
        .max()
        .unwrap_or(0)
        .max(config.window_capacity)
        .max(2);
    let table = Arc::new(HeartbeatTable::from_snapshot(snapshot, capacity)?);
    let ctx = DetectionContext::new(table, Classifier::new(config, liveness));
    let period = config.period_ns();
    let ring = ctx.table.ring_order();
    let mut events = Vec::new();
    match config.mode {
        MonitorMode::Centralized => {
            let mut monitor = CentralizedMonitor::new();
            for k in 0..periods {
                events.extend(monitor.tick(&ctx, start_ns + k * period));
            }
        }
        MonitorMode::Decentralized => {
            let mut monitors: Vec<DecentralizedMonitor> = ring.iter().map(|&id| DecentralizedMonitor::new(id)).collect();
            for k in 0..periods {
                let now = start_ns + k * period;
                for m in &mut monitors {
                    let own = ctx.observe(m.self_id(), &ctx.board.view(), now);
                    if own.state.is_alive() {
                        events.extend(m.tick(&ctx, now)?);
                    }
                }
            }
        }
    }
    let queries = count_queries(&events, config.mode);
    Ok(ReplayResult { mode: config.mode, periods, events, queries })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detect::{BehaviorState, StaticLiveness};

    fn cfg(mode: MonitorMode) -> MonitorConfig {
        MonitorConfig::for_heart_rate(mode, 3000.0)
    }

    fn run(trace: &TableSnapshot, mode: MonitorMode, dead: &[u32], periods: u64) -> ReplayResult {
        let c = cfg(mode);
        let start = default_start(trace, &c);
        replay(trace, c, Arc::new(StaticLiveness::dead(dead.iter().copied())), start, periods).unwrap()
    }

    #[test]
    fn healthy_query_counts() {
        let trace = synthetic_trace(4, 1000.0, 200, 1_000_000, 7, &[]);
        let central = run(&trace, MonitorMode::Centralized, &[], 100);
        assert_eq!((central.queries.total, central.queries.max), (400, 400));
        let ring = run(&trace, MonitorMode::Decentralized, &[], 100);
        assert_eq!(ring.queries.max, 100);
        assert!(ring.queries.per_detector.values().all(|&q| q == 100));
    }

    #[test]
    fn ten_workers_cost_a_tenth() {
        let trace = synthetic_trace(10, 1000.0, 200, 0, 3, &[]);
        let central = run(&trace, MonitorMode::Centralized, &[], 100);
        let ring = run(&trace, MonitorMode::Decentralized, &[], 100);
        assert_eq!(central.queries.max, 1000);
        assert_eq!(ring.queries.max, 100);
    }

    #[test]
    fn dead_neighbor_costs_its_predecessor() {
        let stop = TraceStop { thread_id: 3, at_ms: 10, exit_marker: false };
        let trace = synthetic_trace(4, 1000.0, 200, 0, 1, &[stop]);
        let ring = run(&trace, MonitorMode::Decentralized, &[3], 100);
        assert!(ring.queries.per_detector["2"] > 100);
        for w in ["0", "1"] {
            assert_eq!(ring.queries.per_detector[w], 100);
        }
        assert!(!ring.queries.per_detector.contains_key("3"));
        let last = ring.events.iter().rev().find(|e| e.subject_id == 3).unwrap();
        assert_eq!(last.state, BehaviorState::Failure);
    }

    #[test]
    fn modes_agree_on_states() {
        let stops = [
            TraceStop { thread_id: 1, at_ms: 40, exit_marker: true },
            TraceStop { thread_id: 4, at_ms: 60, exit_marker: false },
        ];
        let trace = synthetic_trace(6, 1000.0, 150, 0, 11, &stops);
        let central = run(&trace, MonitorMode::Centralized, &[4], 120);
        let ring = run(&trace, MonitorMode::Decentralized, &[4], 120);
        for e in &ring.events {
            let c = central
                .events
                .iter()
                .find(|c| c.detected_at_ns == e.detected_at_ns && c.subject_id == e.subject_id)
                .unwrap();
            assert_eq!(c.state, e.state, "{e:?}");
        }
    }

    #[test]
    fn heart_rate_estimate_tracks_generator() {
        let trace = synthetic_trace(3, 500.0, 400, 0, 2, &[]);
        let r = estimate_heart_rate(&trace).unwrap();
        assert!((r - 500.0).abs() < 10.0, "{r}");
        assert_eq!(estimate_heart_rate(&TableSnapshot::default()), None);
    }

    #[test]
    fn replay_is_deterministic() {
        let trace = synthetic_trace(5, 800.0, 120, 0, 9, &[TraceStop { thread_id: 2, at_ms: 50, exit_marker: false }]);
        let a = run(&trace, MonitorMode::Decentralized, &[2], 80);
        let b = run(&trace, MonitorMode::Decentralized, &[2], 80);
        assert_eq!(a, b);
    }
}
