//! Behavior classification from heartbeat evidence, the ring walk, and the
//! centralized / decentralized monitor drivers.

mod liveness;
mod monitor;
mod ring;

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::MonitorConfig;
use crate::heartbeat::{rate_over, Heartbeat, SequenceSnapshot};

pub use liveness::{AliveGuard, LivenessOracle, LivenessRegistry, StaticLiveness};
pub use monitor::{
    run_centralized_monitor, run_decentralized_monitor, BehaviorBoard, BoardView, CentralizedMonitor,
    DecentralizedMonitor, DetectionContext, DetectionEvent, DetectorId, EventLog, MonitorStats,
    EVENT_CSV_HEADER,
};
pub use ring::{next_alive_neighbor, RingWalk};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BehaviorState {
    NotStarted,
    Running,
    BusyWaiting,
    ConditionalWaiting,
    Exit,
    Failure,
}

impl BehaviorState {
    pub const ALL: [BehaviorState; 6] = [
        Self::NotStarted,
        Self::Running,
        Self::BusyWaiting,
        Self::ConditionalWaiting,
        Self::Exit,
        Self::Failure,
    ];

    /// Running and busy-waiting threads still make progress; the ring walk stops at them.
    pub fn is_alive(self) -> bool {
        matches!(self, Self::Running | Self::BusyWaiting)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::NotStarted => "not_started",
            Self::Running => "running",
            Self::BusyWaiting => "busy_waiting",
            Self::ConditionalWaiting => "conditional_waiting",
            Self::Exit => "exit",
            Self::Failure => "failure",
        }
    }

    pub(crate) fn to_code(self) -> u8 {
        self as u8
    }

    pub(crate) fn from_code(code: u8) -> Option<Self> {
        Self::ALL.get(code as usize).copied()
    }
}

impl fmt::Display for BehaviorState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unknown behavior state `{0}`")]
pub struct ParseStateError(pub String);

impl FromStr for BehaviorState {
    type Err = ParseStateError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|st| st.as_str() == s)
            .ok_or_else(|| ParseStateError(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DetectError {
    #[error("ring walk needs at least two threads")]
    SingletonRing,
    #[error("thread {0} is not on the ring")]
    NotInRing(u32),
}

/// One classified thread at one instant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub subject: u32,
    pub state: BehaviorState,
    /// Heart rate over the configured rate window, beats/s.
    pub rate: f64,
    /// Inter-beat intervals over the window were smooth (see `busywait_cv_max`).
    #[serde(default)]
    pub steady: bool,
}

/// Decision procedure over one sequence, first match wins:
///
/// 1. exit marker set: `Exit`
/// 2. never started: `NotStarted`
/// 3. silent for `stall_periods` detection periods and the thread is dead: `Failure`
/// 4. the same silence with the thread alive: `ConditionalWaiting`
/// 5. nonzero rate at or below `busywait_ratio * baseline` with smooth
///    inter-beat intervals: `BusyWaiting`
/// 6. `Running`
///
/// Records stamped after `now_ns` are ignored, which makes the function
/// usable on frozen traces. A `baseline_rate` of 0 skips rule 5.
pub fn assess(
    sequence: &SequenceSnapshot,
    liveness: &dyn LivenessOracle,
    baseline_rate: f64,
    config: &MonitorConfig,
    now_ns: u64,
) -> Observation {
    let subject = sequence.thread_id;
    let cut = sequence.cut(now_ns);
    let records = &sequence.records[..cut];
    let window_ns = config.rate_window_ns();
    let rate = rate_over(records, now_ns, window_ns);
    let observe = |state| Observation { subject, state, rate, steady: false };

    if sequence.exited && cut == sequence.records.len() {
        return observe(BehaviorState::Exit);
    }
    let started = sequence.started && (cut > 0 || sequence.records.first().is_none_or(|r| r.seq_no > 1));
    if !started {
        return observe(BehaviorState::NotStarted);
    }
    let stalled = records
        .last()
        .is_none_or(|last| now_ns.saturating_sub(last.timestamp_ns) >= config.stall_ns());
    if stalled {
        return if liveness.is_alive(subject) {
            observe(BehaviorState::ConditionalWaiting)
        } else {
            observe(BehaviorState::Failure)
        };
    }
    let steady = interval_cv(records, now_ns, window_ns).is_some_and(|cv| cv <= config.busywait_cv_max);
    let state = if baseline_rate > 0.0 && rate > 0.0 && rate <= config.busywait_ratio * baseline_rate && steady {
        BehaviorState::BusyWaiting
    } else {
        BehaviorState::Running
    };
    Observation { subject, state, rate, steady }
}

pub fn classify(
    sequence: &SequenceSnapshot,
    liveness: &dyn LivenessOracle,
    baseline_rate: f64,
    config: &MonitorConfig,
    now_ns: u64,
) -> BehaviorState {
    assess(sequence, liveness, baseline_rate, config, now_ns).state
}

/// Coefficient of variation of the inter-beat intervals covering the rate
/// window. The interval leading into the window is included, so a window
/// that opens right after a long pause is never smooth. Late beats are
/// forgiven, one per `HICCUP_MIN_INTERVALS` intervals: the longest intervals
/// are left out while they are at most `HICCUP_FACTOR` times the median.
/// `None` when the thread has not been beating for a whole window or fewer
/// than two intervals are available.
const HICCUP_FACTOR: f64 = 3.0;
const HICCUP_MIN_INTERVALS: usize = 8;

pub(crate) fn interval_cv(records: &[Heartbeat], now_ns: u64, window_ns: u64) -> Option<f64> {
    if now_ns < window_ns {
        return None;
    }
    let records = &records[..records.partition_point(|r| r.timestamp_ns <= now_ns)];
    let lower = now_ns - window_ns;
    let first_in = records.partition_point(|r| r.timestamp_ns <= lower);
    if first_in == 0 {
        return None;
    }
    let span = &records[first_in - 1..];
    if span.len() < 3 {
        return None;
    }
    let mut intervals: Vec<f64> = span.windows(2).map(|w| (w[1].timestamp_ns - w[0].timestamp_ns) as f64).collect();
    intervals.sort_by(f64::total_cmp);
    let median = intervals[intervals.len() / 2];
    for _ in 0..intervals.len() / HICCUP_MIN_INTERVALS {
        if intervals[intervals.len() - 1] > HICCUP_FACTOR * median {
            break;
        }
        intervals.pop();
    }
    let n = intervals.len() as f64;
    let mean = intervals.iter().sum::<f64>() / n;
    if mean <= 0.0 {
        return None;
    }
    let var = intervals.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    Some(var.sqrt() / mean)
}

/// Thresholds plus the liveness probe: everything a monitor needs to turn a
/// sequence into a state.
#[derive(Clone)]
pub struct Classifier {
    pub config: MonitorConfig,
    pub liveness: Arc<dyn LivenessOracle>,
}

impl Classifier {
    pub fn new(config: MonitorConfig, liveness: Arc<dyn LivenessOracle>) -> Self {
        Self { config, liveness }
    }

    pub fn assess(&self, sequence: &SequenceSnapshot, baseline_rate: f64, now_ns: u64) -> Observation {
        assess(sequence, self.liveness.as_ref(), baseline_rate, &self.config, now_ns)
    }
}

impl fmt::Debug for Classifier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Classifier").field("config", &self.config).finish_non_exhaustive()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clock::NS_PER_MS;

    fn cfg() -> MonitorConfig {
        MonitorConfig {
            detection_period_ms: 10,
            rate_window_ms: 100,
            stall_periods: 3,
            ..MonitorConfig::default()
        }
    }

    fn seq_with(ts_ms: &[f64]) -> SequenceSnapshot {
        let records: Vec<Heartbeat> = ts_ms
            .iter()
            .enumerate()
            .map(|(i, &t)| Heartbeat {
                thread_id: 3,
                seq_no: i as u64 + 1,
                timestamp_ns: (t * NS_PER_MS as f64) as u64,
                loop_id: 0,
                iteration: i as u64,
            })
            .collect();
        SequenceSnapshot {
            thread_id: 3,
            last_seq_no: records.len() as u64,
            started: !records.is_empty(),
            exited: false,
            records,
        }
    }

    fn every(step_ms: f64, from: f64, to: f64) -> Vec<f64> {
        let mut v = Vec::new();
        let mut t = from;
        while t <= to {
            v.push(t);
            t += step_ms;
        }
        v
    }

    const ALIVE: StaticLiveness = StaticLiveness::all_alive();

    #[test]
    fn exit_marker_wins() {
        let mut s = seq_with(&every(1.0, 0.0, 500.0));
        s.exited = true;
        let dead = StaticLiveness::dead([3]);
        assert_eq!(classify(&s, &dead, 1000.0, &cfg(), 500 * NS_PER_MS), BehaviorState::Exit);
        // never started but marked
        let mut empty = seq_with(&[]);
        empty.exited = true;
        assert_eq!(classify(&empty, &ALIVE, 0.0, &cfg(), 0), BehaviorState::Exit);
    }

    #[test]
    fn not_started() {
        let s = seq_with(&[]);
        assert_eq!(classify(&s, &ALIVE, 0.0, &cfg(), 10 * NS_PER_MS), BehaviorState::NotStarted);
    }

    #[test]
    fn sustained_silence_splits_on_liveness() {
        let s = seq_with(&every(1.0, 0.0, 200.0));
        let now = 231 * NS_PER_MS; // 31 ms > 3 periods of 10 ms
        assert_eq!(classify(&s, &StaticLiveness::dead([3]), 1000.0, &cfg(), now), BehaviorState::Failure);
        assert_eq!(classify(&s, &ALIVE, 1000.0, &cfg(), now), BehaviorState::ConditionalWaiting);
        // 29 ms of silence is still inside the allowance
        let now = 229 * NS_PER_MS;
        assert_eq!(classify(&s, &StaticLiveness::dead([3]), 1000.0, &cfg(), now), BehaviorState::Running);
    }

    #[test]
    fn reduced_smooth_rate_is_busy_waiting() {
        // baseline 1000 beats/s; this thread beats every 3.33 ms (~300 beats/s)
        let s = seq_with(&every(10.0 / 3.0, 0.0, 400.0));
        let now = 400 * NS_PER_MS;
        let obs = assess(&s, &ALIVE, 1000.0, &cfg(), now);
        assert!((obs.rate - 300.0).abs() <= 10.0, "{}", obs.rate);
        assert_eq!(obs.state, BehaviorState::BusyWaiting);
        // no baseline yet: busy test skipped
        assert_eq!(classify(&s, &ALIVE, 0.0, &cfg(), now), BehaviorState::Running);
    }

    #[test]
    fn near_baseline_is_running() {
        let s = seq_with(&every(1.0, 0.0, 400.0));
        assert_eq!(classify(&s, &ALIVE, 1000.0, &cfg(), 400 * NS_PER_MS), BehaviorState::Running);
    }

    #[test]
    fn jittery_slow_rate_is_running() {
        // slow, but alternating 1 ms / 9 ms gaps: not smooth
        let mut ts = Vec::new();
        let mut t = 0.0;
        while t < 400.0 {
            ts.push(t);
            t += 1.0;
            ts.push(t);
            t += 9.0;
        }
        let s = seq_with(&ts);
        assert_eq!(classify(&s, &ALIVE, 1000.0, &cfg(), 400 * NS_PER_MS), BehaviorState::Running);
    }

    #[test]
    fn resume_after_pause_is_not_busy() {
        // beats resume at 300 ms after a 200 ms pause; steady 5 ms cadence
        let mut ts = every(1.0, 0.0, 100.0);
        ts.extend(every(5.0, 300.0, 330.0));
        let s = seq_with(&ts);
        assert_eq!(classify(&s, &ALIVE, 1000.0, &cfg(), 331 * NS_PER_MS), BehaviorState::Running);
    }

    #[test]
    fn young_thread_is_not_busy() {
        let s = seq_with(&every(5.0, 50.0, 90.0));
        assert_eq!(classify(&s, &ALIVE, 1000.0, &cfg(), 91 * NS_PER_MS), BehaviorState::Running);
    }

    #[test]
    fn future_records_ignored() {
        let s = seq_with(&every(1.0, 0.0, 400.0));
        // at 50 ms, the thread had been beating for 50 ms
        assert_eq!(classify(&s, &ALIVE, 0.0, &cfg(), 50 * NS_PER_MS), BehaviorState::Running);
        let mut exited = s.clone();
        exited.exited = true;
        assert_eq!(classify(&exited, &ALIVE, 0.0, &cfg(), 50 * NS_PER_MS), BehaviorState::Running);
    }

    #[test]
    fn cv_of_steady_intervals_is_zero() {
        let s = seq_with(&every(2.0, 0.0, 300.0));
        let cv = interval_cv(&s.records, 300 * NS_PER_MS, 100 * NS_PER_MS).unwrap();
        assert!(cv < 1e-9);
        assert!(interval_cv(&s.records, 50 * NS_PER_MS, 100 * NS_PER_MS).is_none());
    }

    #[test]
    fn late_beats_are_forgiven_but_a_pause_is_not() {
        let mut stamps = every(2.0, 0.0, 300.0);
        // Every beat from the 120th on is 2 ms late, and again from the 130th.
        stamps[120..].iter_mut().for_each(|t| *t += 2.0);
        stamps[130..].iter_mut().for_each(|t| *t += 2.0);
        let late = seq_with(&stamps);
        assert!(interval_cv(&late.records, 300 * NS_PER_MS, 100 * NS_PER_MS).unwrap() < 1e-9);
        // A 20 ms pause inside the window stays visible.
        let mut paused = every(2.0, 0.0, 200.0);
        paused.extend(every(2.0, 220.0, 300.0));
        let paused = seq_with(&paused);
        assert!(interval_cv(&paused.records, 300 * NS_PER_MS, 100 * NS_PER_MS).unwrap() > 0.25);
        // Eight delays among fifty intervals exceed the allowance of six.
        for i in (105..145).step_by(5).filter(|&i| i != 120 && i != 130) {
            stamps[i..].iter_mut().for_each(|t| *t += 2.0);
        }
        let many = seq_with(&stamps);
        assert!(interval_cv(&many.records, 300 * NS_PER_MS, 100 * NS_PER_MS).unwrap() > 0.1);
    }

    #[test]
    fn state_strings_round_trip() {
        for st in BehaviorState::ALL {
            assert_eq!(st.as_str().parse::<BehaviorState>().unwrap(), st);
            assert_eq!(BehaviorState::from_code(st.to_code()), Some(st));
        }
        assert!("alive".parse::<BehaviorState>().is_err());
    }
}
