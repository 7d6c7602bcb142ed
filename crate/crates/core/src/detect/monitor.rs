use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicBool, AtomicU64, AtomicU8, Ordering};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use super::{next_alive_neighbor, BehaviorState, Classifier, DetectError, Observation};
use crate::clock;
use crate::heartbeat::{HeartbeatHandle, HeartbeatTable};

/// Who produced a detection event.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum DetectorId {
    /// The single monitor thread of centralized mode.
    Monitor,
    /// A worker monitoring its ring neighbors.
    Worker(u32),
}

impl fmt::Display for DetectorId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Monitor => f.write_str("monitor"),
            Self::Worker(id) => write!(f, "{id}"),
        }
    }
}

impl FromStr for DetectorId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "monitor" {
            return Ok(Self::Monitor);
        }
        s.parse().map(Self::Worker).map_err(|_| format!("bad detector id `{s}`"))
    }
}

pub const EVENT_CSV_HEADER: &str = "detected_at_ns,detector_id,subject_id,state,observed_rate";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionEvent {
    pub detected_at_ns: u64,
    pub detector: DetectorId,
    pub subject_id: u32,
    pub state: BehaviorState,
    pub observed_rate: f64,
}

impl DetectionEvent {
    pub fn new(detector: DetectorId, obs: Observation, detected_at_ns: u64) -> Self {
        Self { detected_at_ns, detector, subject_id: obs.subject, state: obs.state, observed_rate: obs.rate }
    }

    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{},{}",
            self.detected_at_ns, self.detector, self.subject_id, self.state, self.observed_rate
        )
    }

    pub fn from_csv(line: &str) -> Result<Self, String> {
        let f: Vec<&str> = line.trim_end().split(',').collect();
        if f.len() != 5 {
            return Err(format!("expected 5 fields, found {}", f.len()));
        }
        Ok(Self {
            detected_at_ns: f[0].parse().map_err(|_| format!("bad timestamp `{}`", f[0]))?,
            detector: f[1].parse()?,
            subject_id: f[2].parse().map_err(|_| format!("bad subject `{}`", f[2]))?,
            state: f[3].parse().map_err(|e: super::ParseStateError| e.to_string())?,
            observed_rate: f[4].parse().map_err(|_| format!("bad rate `{}`", f[4]))?,
        })
    }
}

/// Concurrent sink every monitor appends to.
#[derive(Debug, Default)]
pub struct EventLog {
    events: Mutex<Vec<DetectionEvent>>,
}

impl EventLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn extend(&self, batch: impl IntoIterator<Item = DetectionEvent>) {
        self.events.lock().unwrap().extend(batch);
    }

    pub fn snapshot(&self) -> Vec<DetectionEvent> {
        self.events.lock().unwrap().clone()
    }

    pub fn len(&self) -> usize {
        self.events.lock().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(EVENT_CSV_HEADER);
        out.push('\n');
        for e in self.events.lock().unwrap().iter() {
            out.push_str(&e.to_csv());
            out.push('\n');
        }
        out
    }
}

const NO_STATE: u8 = u8::MAX;

/// Per-verdict decay of a thread's remembered running rate. The memory
/// follows the recent peak, so ordinary pace jitter does not drag it down.
const RUNNING_RATE_DECAY: f64 = 0.98;

struct BoardSlot {
    state: AtomicU8,
    rate: AtomicU64,
    running_rate: AtomicU64,
}

/// Latest published behavior and rate per thread (the behavior keyword
/// slots every detector writes and reads). Baselines for the busy-wait test
/// come from here.
pub struct BehaviorBoard {
    slots: Vec<BoardSlot>,
}

/// Plain copy of the board taken at the start of a detection period.
#[derive(Debug, Clone, PartialEq)]
pub struct BoardView {
    entries: Vec<Option<(BehaviorState, f64)>>,
    running_rates: Vec<f64>,
}

impl BehaviorBoard {
    pub fn new(thread_ids: &[u32]) -> Self {
        let n = thread_ids.iter().max().map_or(0, |&m| m as usize + 1);
        Self {
            slots: (0..n)
                .map(|_| BoardSlot {
                    state: AtomicU8::new(NO_STATE),
                    rate: AtomicU64::new(0f64.to_bits()),
                    running_rate: AtomicU64::new(0f64.to_bits()),
                })
                .collect(),
        }
    }

    pub fn publish(&self, obs: &Observation) {
        let Some(slot) = self.slots.get(obs.subject as usize) else { return };
        slot.rate.store(obs.rate.to_bits(), Ordering::Relaxed);
        let remembered = f64::from_bits(slot.running_rate.load(Ordering::Relaxed));
        if obs.state == BehaviorState::Running && (obs.steady || obs.rate > remembered) {
            let kept = obs.rate.max(remembered * RUNNING_RATE_DECAY);
            slot.running_rate.store(kept.to_bits(), Ordering::Relaxed);
        }
        slot.state.store(obs.state.to_code(), Ordering::Release);
    }

    pub fn state(&self, thread_id: u32) -> Option<BehaviorState> {
        let slot = self.slots.get(thread_id as usize)?;
        BehaviorState::from_code(slot.state.load(Ordering::Acquire))
    }

    pub fn view(&self) -> BoardView {
        BoardView {
            entries: self
                .slots
                .iter()
                .map(|s| {
                    BehaviorState::from_code(s.state.load(Ordering::Acquire))
                        .map(|st| (st, f64::from_bits(s.rate.load(Ordering::Relaxed))))
                })
                .collect(),
            running_rates: self.slots.iter().map(|s| f64::from_bits(s.running_rate.load(Ordering::Relaxed))).collect(),
        }
    }
}

impl BoardView {
    /// Mean rate of the other threads last seen Running; without any, the
    /// subject's own remembered Running rate (0 before it has one). The
    /// memory jumps up to any higher Running rate and otherwise decays
    /// slowly, and only on Running verdicts over smooth intervals, so a
    /// window straddling a slowdown does not erode it.
    pub fn baseline_for(&self, thread_id: u32) -> f64 {
        let (sum, count) = self
            .entries
            .iter()
            .enumerate()
            .filter(|&(id, _)| id != thread_id as usize)
            .filter_map(|(_, e)| *e)
            .filter(|(st, _)| *st == BehaviorState::Running)
            .fold((0.0, 0usize), |(s, c), (_, r)| (s + r, c + 1));
        if count > 0 {
            sum / count as f64
        } else {
            self.running_rates.get(thread_id as usize).copied().unwrap_or(0.0)
        }
    }

    pub fn state(&self, thread_id: u32) -> Option<BehaviorState> {
        self.entries.get(thread_id as usize).copied().flatten().map(|(st, _)| st)
    }

    /// Every published entry as an observation, by thread id.
    pub fn observations(&self) -> Vec<Observation> {
        self.entries
            .iter()
            .enumerate()
            .filter_map(|(id, e)| e.map(|(state, rate)| Observation { subject: id as u32, state, rate, steady: false }))
            .collect()
    }
}

/// Shared state a monitor needs: the table, the classifier and the board.
#[derive(Clone)]
pub struct DetectionContext {
    pub table: Arc<HeartbeatTable>,
    pub classifier: Classifier,
    pub board: Arc<BehaviorBoard>,
}

impl DetectionContext {
    pub fn new(table: Arc<HeartbeatTable>, classifier: Classifier) -> Self {
        let board = Arc::new(BehaviorBoard::new(&table.ring_order()));
        Self { table, classifier, board }
    }

    /// Reads the part of `thread_id`'s sequence the classifier needs at `now_ns` and classifies it.
    pub fn observe(&self, thread_id: u32, view: &BoardView, now_ns: u64) -> Observation {
        let since = now_ns.saturating_sub(self.classifier.config.rate_window_ns());
        let seq = self.table.read_window(thread_id, since).expect("ring ids are registered");
        self.classifier.assess(&seq, view.baseline_for(thread_id), now_ns)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MonitorStats {
    pub periods: u64,
    pub queries: u64,
}

/// One monitor thread reading every worker's sequence each period.
#[derive(Debug, Default)]
pub struct CentralizedMonitor {
    pub stats: MonitorStats,
}

impl CentralizedMonitor {
    pub fn new() -> Self {
        Self::default()
    }

    /// One detection period at `now_ns`: one query and one event per registered thread.
    pub fn tick(&mut self, ctx: &DetectionContext, now_ns: u64) -> Vec<DetectionEvent> {
        let view = ctx.board.view();
        let observations: Vec<Observation> =
            ctx.table.ring_order().into_iter().map(|id| ctx.observe(id, &view, now_ns)).collect();
        for obs in &observations {
            ctx.board.publish(obs);
        }
        let events: Vec<DetectionEvent> =
            observations.into_iter().map(|obs| DetectionEvent::new(DetectorId::Monitor, obs, now_ns)).collect();
        self.stats.periods += 1;
        self.stats.queries += events.len() as u64;
        events
    }
}

/// Per-worker ring monitor: each period the worker walks clockwise to its
/// first alive neighbor, reporting every thread it passes.
#[derive(Debug)]
pub struct DecentralizedMonitor {
    self_id: u32,
    pub stats: MonitorStats,
    pub last_queries: u64,
}

impl DecentralizedMonitor {
    pub fn new(self_id: u32) -> Self {
        Self { self_id, stats: MonitorStats::default(), last_queries: 0 }
    }

    pub fn self_id(&self) -> u32 {
        self.self_id
    }

    pub fn tick(&mut self, ctx: &DetectionContext, now_ns: u64) -> Result<Vec<DetectionEvent>, DetectError> {
        let view = ctx.board.view();
        let ring = ctx.table.ring_order();
        let walk = next_alive_neighbor(&ring, self.self_id, |id| ctx.observe(id, &view, now_ns))?;
        for obs in &walk.visited {
            ctx.board.publish(obs);
        }
        self.stats.periods += 1;
        self.last_queries = walk.queries() as u64;
        self.stats.queries += self.last_queries;
        let me = DetectorId::Worker(self.self_id);
        Ok(walk.visited.iter().map(|&obs| DetectionEvent::new(me, obs, now_ns)).collect())
    }
}

/// Polls every worker once per detection period until `stop` is set or the
/// application exits. `after_period` sees each period's events.
pub fn run_centralized_monitor<F>(ctx: &DetectionContext, stop: &AtomicBool, sink: &EventLog, mut after_period: F) -> MonitorStats
where
    F: FnMut(&[DetectionEvent]),
{
    let period = ctx.classifier.config.period_ns();
    let mut monitor = CentralizedMonitor::new();
    let mut next = clock::now_ns();
    while !stop.load(Ordering::Acquire) && !ctx.table.application_exited() {
        let events = monitor.tick(ctx, clock::now_ns());
        after_period(&events);
        sink.extend(events);
        next = advance(next, period);
        clock::sleep_until(next);
    }
    monitor.stats
}

/// Ring monitor loop for a worker that has no other work to interleave with.
/// When `own` is given the worker also emits one heartbeat per period, so
/// detection never silences the caller.
pub fn run_decentralized_monitor(
    ctx: &DetectionContext,
    self_id: u32,
    stop: &AtomicBool,
    sink: &EventLog,
    own: Option<&HeartbeatHandle>,
) -> Result<MonitorStats, DetectError> {
    let period = ctx.classifier.config.period_ns();
    let mut monitor = DecentralizedMonitor::new(self_id);
    let mut next = clock::now_ns();
    let mut iteration = 0;
    while !stop.load(Ordering::Acquire) && !ctx.table.application_exited() {
        if let Some(h) = own {
            if !h.is_exited() {
                let _ = h.record_now(0, iteration);
                iteration += 1;
            }
        }
        sink.extend(monitor.tick(ctx, clock::now_ns())?);
        next = advance(next, period);
        clock::sleep_until(next);
    }
    Ok(monitor.stats)
}

// Keeps a fixed grid, skipping missed slots after an overrun.
fn advance(prev: u64, period: u64) -> u64 {
    let now = clock::now_ns();
    let mut next = prev + period;
    if next <= now {
        next += (now - next) / period * period + period;
    }
    next
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clock::NS_PER_MS;
    use crate::config::{MonitorConfig, MonitorMode};
    use crate::detect::StaticLiveness;

    fn cfg() -> MonitorConfig {
        MonitorConfig { detection_period_ms: 1, rate_window_ms: 20, ..MonitorConfig::new(MonitorMode::Centralized) }
    }

    /// Threads beating every ms from 0 to `until_ms[i]`.
    fn frozen(until_ms: &[u64]) -> Arc<HeartbeatTable> {
        let t = Arc::new(HeartbeatTable::new(1024));
        for (id, &until) in until_ms.iter().enumerate() {
            let h = t.register_thread(id as u32).unwrap();
            for ms in 0..=until {
                h.record(1, ms, ms * NS_PER_MS).unwrap();
            }
        }
        t
    }

    fn ctx(table: Arc<HeartbeatTable>, dead: &[u32]) -> DetectionContext {
        DetectionContext::new(table, Classifier::new(cfg(), Arc::new(StaticLiveness::dead(dead.iter().copied()))))
    }

    #[test]
    fn centralized_counts_one_query_per_worker_per_period() {
        let c = ctx(frozen(&[100, 100, 100, 100]), &[]);
        let mut m = CentralizedMonitor::new();
        for p in 0..10 {
            let ev = m.tick(&c, (50 + p) * NS_PER_MS);
            assert_eq!(ev.len(), 4);
            assert!(ev.iter().all(|e| e.state == BehaviorState::Running && e.detector == DetectorId::Monitor));
        }
        assert_eq!(m.stats, MonitorStats { periods: 10, queries: 40 });
    }

    #[test]
    fn decentralized_skips_dead_neighbor() {
        // thread 3 stops at 50 ms and is dead
        let c = ctx(frozen(&[200, 200, 200, 50]), &[3]);
        let mut w2 = DecentralizedMonitor::new(2);
        let ev = w2.tick(&c, 40 * NS_PER_MS).unwrap();
        assert_eq!(ev.len(), 1);
        let ev = w2.tick(&c, 60 * NS_PER_MS).unwrap();
        let seen: Vec<(u32, BehaviorState)> = ev.iter().map(|e| (e.subject_id, e.state)).collect();
        assert_eq!(seen, vec![(3, BehaviorState::Failure), (0, BehaviorState::Running)]);
        assert_eq!(w2.last_queries, 2);
        assert_eq!(w2.stats.queries, 3);
    }

    #[test]
    fn baseline_uses_running_threads_then_own_history() {
        let board = BehaviorBoard::new(&[0, 1, 2]);
        assert_eq!(board.view().baseline_for(0), 0.0);
        board.publish(&Observation { subject: 0, state: BehaviorState::Running, rate: 100.0, steady: true });
        board.publish(&Observation { subject: 1, state: BehaviorState::Running, rate: 200.0, steady: true });
        board.publish(&Observation { subject: 2, state: BehaviorState::BusyWaiting, rate: 30.0, steady: true });
        assert_eq!(board.view().baseline_for(2), 150.0);
        board.publish(&Observation { subject: 0, state: BehaviorState::ConditionalWaiting, rate: 0.0, steady: true });
        board.publish(&Observation { subject: 1, state: BehaviorState::ConditionalWaiting, rate: 0.0, steady: true });
        // nobody running: thread 0 falls back to its own last running rate
        assert_eq!(board.view().baseline_for(0), 100.0);
        assert_eq!(board.view().baseline_for(2), 0.0);
        assert_eq!(board.state(1), Some(BehaviorState::ConditionalWaiting));
    }

    #[test]
    fn event_csv_round_trip() {
        let e = DetectionEvent {
            detected_at_ns: 123,
            detector: DetectorId::Worker(4),
            subject_id: 5,
            state: BehaviorState::BusyWaiting,
            observed_rate: 0.1 + 0.2,
        };
        assert_eq!(DetectionEvent::from_csv(&e.to_csv()).unwrap(), e);
        let m = DetectionEvent { detector: DetectorId::Monitor, ..e };
        assert_eq!(m.to_csv(), "123,monitor,5,busy_waiting,0.30000000000000004");
        assert_eq!(DetectionEvent::from_csv(&m.to_csv()).unwrap(), m);
        assert!(DetectionEvent::from_csv("1,2,3").is_err());
    }

    #[test]
    fn stop_before_first_period_emits_nothing() {
        let c = ctx(frozen(&[10, 10]), &[]);
        let stop = AtomicBool::new(true);
        let sink = EventLog::new();
        let stats = run_centralized_monitor(&c, &stop, &sink, |_| {});
        assert_eq!(stats.periods, 0);
        assert!(sink.is_empty());
        let stats = run_decentralized_monitor(&c, 0, &stop, &sink, None).unwrap();
        assert_eq!(stats.periods, 0);
        assert!(sink.is_empty());
    }

    #[test]
    fn live_loop_stops_on_application_exit() {
        let table = frozen(&[5, 5]);
        let c = ctx(Arc::clone(&table), &[]);
        let stop = AtomicBool::new(false);
        let sink = EventLog::new();
        std::thread::scope(|s| {
            let h = s.spawn(|| run_centralized_monitor(&c, &stop, &sink, |_| {}));
            std::thread::sleep(std::time::Duration::from_millis(20));
            table.mark_application_exited();
            let stats = h.join().unwrap();
            assert!(stats.periods >= 1);
            assert_eq!(stats.queries, 2 * stats.periods);
        });
        assert_eq!(sink.len() % 2, 0);
    }

    #[test]
    fn advance_skips_missed_slots() {
        let now = clock::now_ns();
        let next = advance(now.saturating_sub(10 * NS_PER_MS), NS_PER_MS);
        assert!(next > now.saturating_sub(NS_PER_MS));
    }
}
