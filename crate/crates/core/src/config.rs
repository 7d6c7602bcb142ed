use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;
use thiserror::Error;

use crate::clock::NS_PER_MS;

/// Who performs detection: one monitor thread, or every worker on a ring.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MonitorMode {
    Centralized,
    Decentralized,
}

impl MonitorMode {
    /// Numeric run type used by the C-style facade: 0 centralized, 1 decentralized.
    pub fn from_code(code: i32) -> Option<Self> {
        match code {
            0 => Some(Self::Centralized),
            1 => Some(Self::Decentralized),
            _ => None,
        }
    }

    pub fn code(self) -> i32 {
        match self {
            Self::Centralized => 0,
            Self::Decentralized => 1,
        }
    }
}

impl fmt::Display for MonitorMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Centralized => "centralized",
            Self::Decentralized => "decentralized",
        })
    }
}

impl FromStr for MonitorMode {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "centralized" | "0" => Ok(Self::Centralized),
            "decentralized" | "1" => Ok(Self::Decentralized),
            other => Err(ConfigError::UnknownMode(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("unknown monitor mode `{0}`")]
    UnknownMode(String),
    #[error("detection_period_ms must be positive")]
    ZeroPeriod,
    #[error("window_capacity must be at least 2, got {0}")]
    WindowTooSmall(usize),
    #[error("rate_window_ms must be positive")]
    ZeroRateWindow,
    #[error("busywait_ratio must lie in (0, 1), got {0}")]
    BusyRatio(f64),
    #[error("busywait_cv_max must be non-negative, got {0}")]
    BusyCv(f64),
    #[error("stall_periods must be at least 1")]
    ZeroStall,
}

/// Detection thresholds shared by every monitor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MonitorConfig {
    pub mode: MonitorMode,
    pub detection_period_ms: u64,
    /// Heartbeats retained per thread.
    pub window_capacity: usize,
    /// Span over which the heart rate is computed.
    pub rate_window_ms: u64,
    /// A nonzero rate at or below `busywait_ratio * baseline` is a busy-wait candidate.
    pub busywait_ratio: f64,
    /// Upper bound on the coefficient of variation of inter-beat intervals
    /// for a busy-wait candidate to count as smooth.
    pub busywait_cv_max: f64,
    /// Silent detection periods before a thread counts as stalled.
    pub stall_periods: u32,
}

pub const DEFAULT_WINDOW_CAPACITY: usize = 1024;

impl Default for MonitorConfig {
    fn default() -> Self {
        Self {
            mode: MonitorMode::Centralized,
            detection_period_ms: 10,
            window_capacity: DEFAULT_WINDOW_CAPACITY,
            rate_window_ms: 200,
            busywait_ratio: 0.5,
            busywait_cv_max: 0.25,
            stall_periods: 3,
        }
    }
}

impl MonitorConfig {
    pub fn new(mode: MonitorMode) -> Self {
        Self { mode, ..Self::default() }
    }

    /// Detection cadence matched to a heart rate: three expected beats per
    /// detection period (never below 1 ms) and a rate window of 20 periods.
    /// The stall threshold then spans nine normal beats, so a busy-waiting
    /// thread at a third of its pace stays well clear of it.
    pub fn for_heart_rate(mode: MonitorMode, beats_per_s: f64) -> Self {
        let period = ((3000.0 / beats_per_s).round() as u64).max(1);
        Self {
            mode,
            detection_period_ms: period,
            rate_window_ms: 20 * period,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.detection_period_ms == 0 {
            return Err(ConfigError::ZeroPeriod);
        }
        if self.window_capacity < 2 {
            return Err(ConfigError::WindowTooSmall(self.window_capacity));
        }
        if self.rate_window_ms == 0 {
            return Err(ConfigError::ZeroRateWindow);
        }
        if !(self.busywait_ratio > 0.0 && self.busywait_ratio < 1.0) {
            return Err(ConfigError::BusyRatio(self.busywait_ratio));
        }
        if !(self.busywait_cv_max >= 0.0) {
            return Err(ConfigError::BusyCv(self.busywait_cv_max));
        }
        if self.stall_periods == 0 {
            return Err(ConfigError::ZeroStall);
        }
        Ok(())
    }

    pub fn period_ns(&self) -> u64 {
        self.detection_period_ms * NS_PER_MS
    }

    pub fn rate_window_ns(&self) -> u64 {
        self.rate_window_ms * NS_PER_MS
    }

    /// Silence needed before the zero-rate branches apply.
    pub fn stall_ns(&self) -> u64 {
        self.period_ns() * u64::from(self.stall_periods)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        let c = MonitorConfig::default();
        c.validate().unwrap();
        assert_eq!(c.window_capacity, 1024);
        assert_eq!(c.busywait_ratio, 0.5);
        assert_eq!(c.busywait_cv_max, 0.25);
        assert_eq!(c.stall_periods, 3);
    }

    #[test]
    fn rejects_bad_thresholds() {
        let base = MonitorConfig::default();
        let cases = [
            MonitorConfig { detection_period_ms: 0, ..base.clone() },
            MonitorConfig { window_capacity: 1, ..base.clone() },
            MonitorConfig { rate_window_ms: 0, ..base.clone() },
            MonitorConfig { busywait_ratio: 1.0, ..base.clone() },
            MonitorConfig { busywait_ratio: 0.0, ..base.clone() },
            MonitorConfig { busywait_cv_max: f64::NAN, ..base.clone() },
            MonitorConfig { stall_periods: 0, ..base.clone() },
        ];
        for c in cases {
            assert!(c.validate().is_err(), "{c:?}");
        }
    }

    #[test]
    fn mode_codes() {
        assert_eq!(MonitorMode::from_code(0), Some(MonitorMode::Centralized));
        assert_eq!(MonitorMode::from_code(1), Some(MonitorMode::Decentralized));
        assert_eq!(MonitorMode::from_code(7), None);
        assert_eq!("decentralized".parse::<MonitorMode>().unwrap(), MonitorMode::Decentralized);
        assert!("ring".parse::<MonitorMode>().is_err());
    }

    #[test]
    fn heart_rate_cadence() {
        let c = MonitorConfig::for_heart_rate(MonitorMode::Centralized, 1000.0);
        assert_eq!(c.detection_period_ms, 3);
        assert_eq!(c.rate_window_ms, 60);
        let c = MonitorConfig::for_heart_rate(MonitorMode::Centralized, 3000.0);
        assert_eq!(c.detection_period_ms, 1);
        let c = MonitorConfig::for_heart_rate(MonitorMode::Centralized, 10.0);
        assert_eq!(c.detection_period_ms, 300);
        let c = MonitorConfig::for_heart_rate(MonitorMode::Centralized, 5000.0);
        assert_eq!(c.detection_period_ms, 1);
    }
}
