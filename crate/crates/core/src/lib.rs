//! Heartbeat-based thread monitoring for multithreaded programs.
//!
//! Worker threads emit heartbeats into a shared [`HeartbeatTable`]. A
//! centralized monitor thread, or the workers themselves walking a logical
//! ring, classify each thread's recent heartbeat sequence into a
//! [`BehaviorState`]. The [`rate`] module retunes how many loop iterations
//! separate consecutive heartbeats so the team hits a target heart rate.

pub mod clock;
pub mod config;
pub mod detect;
pub mod heartbeat;
pub mod persist;
pub mod rate;
pub mod api;
pub mod workloads;
pub mod bench;

pub use config::{ConfigError, MonitorConfig, MonitorMode};
pub use detect::{
    BehaviorBoard, BehaviorState, CentralizedMonitor, Classifier, DecentralizedMonitor, DetectError, DetectionContext,
    DetectionEvent, DetectorId, EventLog, LivenessOracle, LivenessRegistry, Observation, StaticLiveness,
};
pub use heartbeat::{
    compute_heart_rate, mark_exit, record_heartbeat, CoreError, Heartbeat, HeartbeatHandle, HeartbeatTable,
    SequenceSnapshot, TableSnapshot,
};
pub use persist::{load_log, persist_log, LogError};
