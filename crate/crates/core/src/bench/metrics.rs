use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::BenchError;
use crate::clock::NS_PER_MS;
use crate::config::{MonitorConfig, MonitorMode};
use crate::detect::{BehaviorState, DetectionEvent, DetectorId};
use crate::workloads::{FiredInjection, InjectedBehavior};

/// `(e_alpha - e_beta) / e_beta`.
pub fn compute_overhead(e_alpha: f64, e_beta: f64) -> Result<f64, BenchError> {
    if !(e_beta > 0.0) {
        return Err(BenchError::ZeroBaseline);
    }
    Ok((e_alpha - e_beta) / e_beta)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatencyEntry {
    pub behavior: InjectedBehavior,
    pub target_thread: u32,
    pub fired_at_ns: u64,
    pub detected_at_ns: Option<u64>,
    /// None means the behavior was never reported.
    pub latency_ms: Option<f64>,
}

/// First matching detection after each injection took effect.
pub fn measure_latency(events: &[DetectionEvent], fired: &[FiredInjection]) -> Vec<LatencyEntry> {
    fired
        .iter()
        .map(|f| {
            let want = f.spec.behavior.state();
            let detected_at_ns = events
                .iter()
                .filter(|e| e.subject_id == f.spec.target_thread && e.state == want && e.detected_at_ns >= f.fired_at_ns)
                .map(|e| e.detected_at_ns)
                .min();
            LatencyEntry {
                behavior: f.spec.behavior,
                target_thread: f.spec.target_thread,
                fired_at_ns: f.fired_at_ns,
                detected_at_ns,
                latency_ms: detected_at_ns.map(|d| (d - f.fired_at_ns) as f64 / NS_PER_MS as f64),
            }
        })
        .collect()
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct QueryCounts {
    /// Keyed by detector id (`monitor` or a worker id).
    pub per_detector: BTreeMap<String, u64>,
    pub total: u64,
    pub max: u64,
}

/// One query per classification event, attributed to whoever made it.
/// Centralized logs attribute everything to the monitor.
pub fn count_queries(events: &[DetectionEvent], mode: MonitorMode) -> QueryCounts {
    let mut per_detector = BTreeMap::new();
    for e in events {
        let who = match mode {
            MonitorMode::Centralized => DetectorId::Monitor,
            MonitorMode::Decentralized => e.detector,
        };
        *per_detector.entry(who.to_string()).or_insert(0) += 1;
    }
    let total = per_detector.values().sum();
    let max = per_detector.values().copied().max().unwrap_or(0);
    QueryCounts { per_detector, total, max }
}

pub fn median(values: &[f64]) -> Option<f64> {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| !x.is_nan()).collect();
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { (v[n / 2 - 1] + v[n / 2]) / 2.0 })
}

/// Median over latency samples; None if any injection went undetected.
pub fn median_latency(samples: &[Option<f64>]) -> Option<f64> {
    let found: Option<Vec<f64>> = samples.iter().copied().collect();
    median(&found?)
}

/// Time after a transition during which the detector cannot know yet:
/// the rate window must drain for busy waiting, silence must reach the stall
/// threshold for zero-rate states, the exit marker is seen next period.
/// Two extra periods cover the monitor's phase and scheduling delay.
pub fn detection_allowance_ns(behavior: InjectedBehavior, config: &MonitorConfig) -> u64 {
    let period = config.period_ns();
    match behavior {
        InjectedBehavior::BusyWaiting => config.rate_window_ns() + 2 * period,
        InjectedBehavior::ConditionalWaiting | InjectedBehavior::Failure => config.stall_ns() + 2 * period,
        InjectedBehavior::Exit => 2 * period,
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LabelCheck {
    /// Events held against the ground truth.
    pub checked: usize,
    pub wrong: Vec<DetectionEvent>,
    /// At least one event reported the injected state inside its episode.
    pub detected: bool,
}

impl LabelCheck {
    pub fn all_correct(&self) -> bool {
        self.detected && self.wrong.is_empty()
    }
}

/// Compares every event of one injected run with the ground truth.
///
/// Target thread: before the injection only NotStarted/Running; from
/// `fired + allowance` to the episode's end exactly the injected state;
/// once recovered again Running (or Exit at the natural end). Other
/// threads: never Failure or BusyWaiting (they may block behind the
/// target). Events inside transition allowances are not judged.
pub fn check_labels(events: &[DetectionEvent], fired: &FiredInjection, config: &MonitorConfig) -> LabelCheck {
    use BehaviorState::*;
    let target = fired.spec.target_thread;
    let want = fired.spec.behavior.state();
    let onset = fired.fired_at_ns + detection_allowance_ns(fired.spec.behavior, config);
    let episode_end = fired.ended_at_ns.unwrap_or(u64::MAX);
    let recovered = fired.ended_at_ns.map(|end| end + config.rate_window_ns() + 2 * config.period_ns());
    let mut check = LabelCheck::default();
    for e in events {
        let t = e.detected_at_ns;
        let ok = if e.subject_id != target {
            !matches!(e.state, Failure | BusyWaiting)
        } else if t < fired.fired_at_ns {
            matches!(e.state, NotStarted | Running)
        } else if t >= onset && t <= episode_end {
            if e.state == want {
                check.detected = true;
            }
            e.state == want
        } else if recovered.is_some_and(|r| t >= r) {
            matches!(e.state, Running | Exit)
        } else {
            if t >= fired.fired_at_ns && t <= episode_end && e.state == want {
                check.detected = true;
            }
            continue;
        };
        check.checked += 1;
        if !ok {
            check.wrong.push(*e);
        }
    }
    check
}
