//! Team heart-rate measurement and retuning of the iterations-per-beat knob.
//!
//! The team average counts only threads that are Running or BusyWaiting.
//! When it leaves the `expected ± threshold` band the window arithmetic
//!
//! ```text
//! time      = window_iteration / average        (seconds the window took)
//! amount    = time * expected                   (beats the target rate would emit)
//! iteration = window_iteration / amount         (= average / expected)
//! ```
//!
//! yields a multiplicative correction for the number of loop iterations
//! between heartbeats.

use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::detect::Observation;

pub const DEFAULT_WINDOW_ITERATION: u64 = 100;
pub const DEFAULT_THRESHOLD_FRACTION: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RateError {
    #[error("no Running or BusyWaiting thread to average over")]
    NoLiveThreads,
    #[error("rates must be positive and finite (average {average}, expected {expected})")]
    NonPositiveRate { average: f64, expected: f64 },
    #[error("window_iteration must be at least 1")]
    EmptyWindow,
}

/// Mean current rate over threads that are Running or BusyWaiting.
pub fn average_heart_rate(observations: &[Observation]) -> Result<f64, RateError> {
    let (sum, counter) = observations
        .iter()
        .filter(|o| o.state.is_alive())
        .fold((0.0, 0usize), |(s, c), o| (s + o.rate, c + 1));
    if counter == 0 {
        return Err(RateError::NoLiveThreads);
    }
    Ok(sum / counter as f64)
}

/// Intermediate values of one retuning step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateAdjustment {
    pub average_heartrate: f64,
    pub expected_heartrate: f64,
    pub threshold: f64,
    pub window_iteration: u64,
    pub time_s: f64,
    pub amount: f64,
    /// Factor applied to the iterations between heartbeats.
    pub iteration: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Adjustment {
    /// Average already inside the tolerance band.
    Unchanged,
    Retune(RateAdjustment),
}

impl Adjustment {
    pub fn factor(&self) -> Option<f64> {
        match self {
            Self::Unchanged => None,
            Self::Retune(a) => Some(a.iteration),
        }
    }
}

pub fn default_threshold(expected: f64) -> f64 {
    DEFAULT_THRESHOLD_FRACTION * expected
}

pub fn adjust_heart_rate(
    average: f64,
    expected: f64,
    threshold: f64,
    window_iteration: u64,
) -> Result<Adjustment, RateError> {
    let positive = |x: f64| x.is_finite() && x > 0.0;
    if !positive(average) || !positive(expected) {
        return Err(RateError::NonPositiveRate { average, expected });
    }
    if window_iteration == 0 {
        return Err(RateError::EmptyWindow);
    }
    if expected - threshold <= average && average <= expected + threshold {
        return Ok(Adjustment::Unchanged);
    }
    let window = window_iteration as f64;
    let time_s = (1.0 / average) * window;
    let amount = time_s / (1.0 / expected);
    let iteration = window / amount;
    Ok(Adjustment::Retune(RateAdjustment {
        average_heartrate: average,
        expected_heartrate: expected,
        threshold,
        window_iteration,
        time_s,
        amount,
        iteration,
    }))
}

/// Iterations between heartbeats for one worker. Written by the adjuster,
/// read by the workload at each heartbeat.
#[derive(Debug)]
pub struct BeatInterval(AtomicU64);

impl BeatInterval {
    pub fn new(iterations: u64) -> Self {
        Self(AtomicU64::new(iterations.max(1)))
    }

    #[inline]
    pub fn get(&self) -> u64 {
        self.0.load(Ordering::Relaxed)
    }

    pub fn set(&self, iterations: u64) {
        self.0.store(iterations.max(1), Ordering::Relaxed);
    }
}

/// `round(current * factor)`, clamped to at least 1.
pub fn scaled_interval(current: u64, factor: f64) -> u64 {
    let scaled = (current as f64 * factor).round();
    if scaled < 1.0 {
        1
    } else {
        scaled as u64
    }
}

/// Multiplies the knob by `factor` and returns the new iterations-per-beat.
///
/// # Panics
/// If `factor` is not positive.
pub fn apply_adjustment(interval: &BeatInterval, factor: f64) -> u64 {
    assert!(factor > 0.0, "iteration factor must be positive");
    let next = scaled_interval(interval.get(), factor);
    interval.set(next);
    next
}

/// Deterministic workload for exercising the controller: each iteration
/// costs `iteration_cost_s` and each heartbeat adds `beat_cost_s`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticWorkload {
    pub iteration_cost_s: f64,
    pub beat_cost_s: f64,
    pub interval: u64,
}

impl SyntheticWorkload {
    pub fn heart_rate(&self) -> f64 {
        1.0 / (self.interval as f64 * self.iteration_cost_s + self.beat_cost_s)
    }
}

/// Runs measure → adjust → apply until the rate settles inside the band or
/// `max_rounds` adjustments were made. Returns the measured rate after each
/// round, starting with the initial measurement.
pub fn converge(
    workload: &mut SyntheticWorkload,
    expected: f64,
    threshold: f64,
    window_iteration: u64,
    max_rounds: usize,
) -> Result<Vec<f64>, RateError> {
    let mut history = vec![workload.heart_rate()];
    for _ in 0..max_rounds {
        let measured = *history.last().unwrap();
        match adjust_heart_rate(measured, expected, threshold, window_iteration)? {
            Adjustment::Unchanged => break,
            Adjustment::Retune(a) => {
                workload.interval = scaled_interval(workload.interval, a.iteration);
                history.push(workload.heart_rate());
            }
        }
    }
    Ok(history)
}
