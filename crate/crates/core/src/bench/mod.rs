//! Overhead, detection latency and query-load measurements, live or over
//! frozen traces, and the report files they produce.

mod experiment;
mod metrics;
mod replay;
mod report;

use thiserror::Error;

use crate::api::SessionError;
use crate::config::ConfigError;
use crate::heartbeat::CoreError;
use crate::persist::LogError;
use crate::workloads::WorkloadError;

pub use experiment::{
    calibrate_unit_rate, jittered, measure_detection, measure_overhead, measure_overhead_sweep, run_experiment,
    scale_to_duration, DetectionRun, ExperimentConfig, OverheadSample, RateTarget,
};
pub use metrics::{
    check_labels, compute_overhead, count_queries, detection_allowance_ns, measure_latency, median, median_latency,
    LabelCheck, LatencyEntry, QueryCounts,
};
pub use replay::{
    default_start, estimate_heart_rate, periods_available, replay, synthetic_trace, trace_bounds, ReplayResult, TraceStop,
};
pub use report::{
    parse_report_csv, read_report_json, report_csv, write_report_files, MetricsReport, RateRow, REPORT_VERSION,
};

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("baseline time must be positive")]
    ZeroBaseline,
    #[error("invalid experiment config: {0}")]
    Config(String),
    #[error(transparent)]
    Monitor(#[from] ConfigError),
    #[error(transparent)]
    Workload(#[from] WorkloadError),
    #[error("{kernel} result off by {error:e} (tolerance {tolerance:e})")]
    WorkloadFailure { kernel: String, error: f64, tolerance: f64 },
    #[error(transparent)]
    Session(#[from] SessionError),
    #[error(transparent)]
    Core(#[from] CoreError),
    #[error(transparent)]
    Log(#[from] LogError),
    #[error(transparent)]
    Detect(#[from] crate::detect::DetectError),
    #[error("{0}")]
    Io(#[from] std::io::Error),
    #[error("malformed report: {0}")]
    Report(String),
}

impl BenchError {
    /// Problems with the requested configuration rather than the run.
    pub fn is_config(&self) -> bool {
        matches!(self, Self::Config(_) | Self::Monitor(_) | Self::Workload(_) | Self::ZeroBaseline)
    }

    pub fn is_workload_failure(&self) -> bool {
        matches!(self, Self::WorkloadFailure { .. })
    }
}
