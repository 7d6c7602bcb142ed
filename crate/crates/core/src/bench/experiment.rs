use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::metrics::{compute_overhead, count_queries, detection_allowance_ns, measure_latency, median, LatencyEntry, QueryCounts};
use super::report::{write_report_files, MetricsReport, RateRow, REPORT_VERSION};
use super::BenchError;
use crate::api::{Session, SessionOptions};
use crate::config::{MonitorConfig, MonitorMode};
use crate::detect::DetectionEvent;
use crate::rate::{adjust_heart_rate, scaled_interval, Adjustment, DEFAULT_THRESHOLD_FRACTION, DEFAULT_WINDOW_ITERATION};
use crate::workloads::{
    output_error, reference_output, run_workload, tolerance, FiredInjection, InjectionSpec, KernelOutput, Trigger,
    WorkloadOutcome, WorkloadSpec,
};

pub const LATENCY_ORIGIN: &str = "injection_trigger";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub workload: WorkloadSpec,
    pub mode: MonitorMode,
    /// Target heart rates, beats/s per thread.
    pub rates: Vec<f64>,
    pub repetitions: u32,
    pub injections: Vec<InjectionSpec>,
    pub out_dir: Option<PathBuf>,
    pub seed: u64,
    /// Millisecond-triggered injections are delayed by a seeded draw from
    /// `0..=jitter_ms` in each repetition.
    pub jitter_ms: u64,
    pub threshold_fraction: f64,
    pub window_iteration: u64,
}

impl ExperimentConfig {
    pub fn new(workload: WorkloadSpec, mode: MonitorMode) -> Self {
        Self {
            workload,
            mode,
            rates: vec![10.0, 100.0, 1000.0],
            repetitions: 3,
            injections: Vec::new(),
            out_dir: None,
            seed: 0,
            jitter_ms: 0,
            threshold_fraction: DEFAULT_THRESHOLD_FRACTION,
            window_iteration: DEFAULT_WINDOW_ITERATION,
        }
    }

    pub fn validate(&self) -> Result<(), BenchError> {
        let bad = |m: String| Err(BenchError::Config(m));
        if self.repetitions < 3 {
            return bad(format!("timing needs at least 3 repetitions, got {}", self.repetitions));
        }
        if self.rates.is_empty() {
            return bad("no heart-rate targets".into());
        }
        if let Some(r) = self.rates.iter().find(|r| !(r.is_finite() && **r > 0.0)) {
            return bad(format!("heart rate {r} is not positive"));
        }
        if !(self.threshold_fraction > 0.0 && self.threshold_fraction < 1.0) {
            return bad(format!("threshold fraction {} outside (0, 1)", self.threshold_fraction));
        }
        if self.window_iteration == 0 {
            return bad("window_iteration must be positive".into());
        }
        self.workload.validate(Some(self.mode))?;
        for inj in &self.injections {
            inj.validate(self.workload.threads)?;
        }
        Ok(())
    }
}

fn check_output(spec: &WorkloadSpec, got: &KernelOutput, want: &KernelOutput) -> Result<(), BenchError> {
    let error = output_error(got, want);
    let tol = tolerance(&spec.kind);
    if error <= tol {
        Ok(())
    } else {
        Err(BenchError::WorkloadFailure { kernel: spec.kind.name().into(), error, tolerance: tol })
    }
}

/// Work units per second per thread, from one uninstrumented run.
pub fn calibrate_unit_rate(spec: &WorkloadSpec) -> Result<f64, BenchError> {
    Ok(run_workload(spec, None, &[])?.unit_rate())
}

/// `spec` resized so an uninstrumented run takes about `target_ms`.
pub fn scale_to_duration(spec: &WorkloadSpec, target_ms: f64) -> Result<WorkloadSpec, BenchError> {
    let mut scaled = *spec;
    for _ in 0..3 {
        let elapsed_ms = run_workload(&scaled, None, &[])?.elapsed_s * 1e3;
        let factor = target_ms / elapsed_ms.max(1e-3);
        if (0.85..1.15).contains(&factor) {
            break;
        }
        scaled.kind = scaled.kind.scaled(factor);
    }
    Ok(scaled)
}

/// `injections` with millisecond triggers delayed by a draw that depends
/// only on `(seed, stream)`.
pub fn jittered(injections: &[InjectionSpec], seed: u64, stream: u64, jitter_ms: u64) -> Vec<InjectionSpec> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    injections
        .iter()
        .map(|inj| {
            let mut inj = *inj;
            if let Trigger::AtMs(ms) = inj.start {
                inj.start = Trigger::AtMs(ms + rng.gen_range(0..=jitter_ms));
            }
            inj
        })
        .collect()
}

fn session_options(spec: &WorkloadSpec, config: MonitorConfig, log_path: Option<&Path>) -> SessionOptions {
    let mut o = SessionOptions::with_config(config);
    o.threads = spec.threads;
    o.max_threads = spec.threads;
    o.beats_every = spec.beats_every;
    o.log_path = log_path.map(Path::to_path_buf);
    o.label = Some(spec.kind.name().into());
    o
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverheadSample {
    pub e_alpha_s: f64,
    pub e_beta_s: f64,
    pub beats_every: u64,
    pub achieved_rate: f64,
    pub queries: QueryCounts,
}

/// One heart-rate target of an overhead sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateTarget {
    pub rate: f64,
    pub config: MonitorConfig,
    /// Iterations-per-beat for the first instrumented run.
    pub beats_every: u64,
}

/// `reps` rounds, each timing one uninstrumented run and one instrumented
/// run per target in a rotating order, so slow drift in machine speed
/// spreads evenly over the targets. Every sample of a round shares that
/// round's baseline. After each instrumented run the iterations-per-beat
/// of its target is corrected toward the target rate the same way the rate
/// controller does. Returns the samples per target.
pub fn measure_overhead_sweep(
    spec: &WorkloadSpec,
    targets: &[RateTarget],
    reps: u32,
    threshold_fraction: f64,
    window_iteration: u64,
    reference: Option<&KernelOutput>,
) -> Result<Vec<Vec<OverheadSample>>, BenchError> {
    let check = |out: &WorkloadOutcome| match reference {
        Some(want) => check_output(spec, &out.output, want),
        None => Ok(()),
    };
    // Warm-up: first-touch page faults and cold caches are not overhead.
    check(&run_workload(spec, None, &[])?)?;
    let mut beats_every: Vec<u64> = targets.iter().map(|t| t.beats_every).collect();
    let mut samples: Vec<Vec<OverheadSample>> = vec![Vec::new(); targets.len()];
    // Slot 0 is the baseline, slot i + 1 is target i.
    let slots = targets.len() + 1;
    for round in 0..reps as usize {
        let mut beta = 0.0;
        let mut traced = Vec::new();
        for k in 0..slots {
            let slot = (k + round) % slots;
            if slot == 0 {
                let out = run_workload(spec, None, &[])?;
                check(&out)?;
                beta = out.elapsed_s;
                continue;
            }
            let i = slot - 1;
            let target = &targets[i];
            let instrumented = WorkloadSpec { beats_every: beats_every[i], ..*spec };
            let session = Session::start(session_options(&instrumented, target.config, None))?;
            let out = run_workload(&instrumented, Some(&session), &[])?;
            session.finish()?;
            check(&out)?;
            traced.push((i, out, count_queries(&session.events().snapshot(), target.config.mode)));
        }
        for (i, alpha, queries) in traced {
            let achieved = alpha.achieved_rate();
            samples[i].push(OverheadSample {
                e_alpha_s: alpha.elapsed_s,
                e_beta_s: beta,
                beats_every: beats_every[i],
                achieved_rate: achieved,
                queries,
            });
            let rate = targets[i].rate;
            if achieved > 0.0 {
                let threshold = threshold_fraction * rate;
                if let Ok(Adjustment::Retune(a)) = adjust_heart_rate(achieved, rate, threshold, window_iteration) {
                    beats_every[i] = scaled_interval(beats_every[i], a.iteration);
                }
            }
        }
    }
    Ok(samples)
}

/// Single-target form of [`measure_overhead_sweep`].
pub fn measure_overhead(
    spec: &WorkloadSpec,
    config: MonitorConfig,
    target_rate: f64,
    reps: u32,
    threshold_fraction: f64,
    window_iteration: u64,
    reference: Option<&KernelOutput>,
) -> Result<Vec<OverheadSample>, BenchError> {
    let target = RateTarget { rate: target_rate, config, beats_every: spec.beats_every };
    let mut per_target = measure_overhead_sweep(spec, &[target], reps, threshold_fraction, window_iteration, reference)?;
    Ok(per_target.pop().unwrap_or_default())
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectionRun {
    pub outcome: WorkloadOutcome,
    pub events: Vec<DetectionEvent>,
    pub fired: Vec<FiredInjection>,
    pub latency: Vec<LatencyEntry>,
    pub queries: QueryCounts,
}

/// One instrumented run with injections. The session stays open for one
/// detection allowance after the workload so late verdicts still land.
pub fn measure_detection(
    spec: &WorkloadSpec,
    config: MonitorConfig,
    injections: &[InjectionSpec],
    log_path: Option<&Path>,
) -> Result<DetectionRun, BenchError> {
    let session = Session::start(session_options(spec, config, log_path))?;
    let outcome = run_workload(spec, Some(&session), injections)?;
    let grace = injections.iter().map(|i| detection_allowance_ns(i.behavior, &config)).max().unwrap_or(0);
    std::thread::sleep(std::time::Duration::from_nanos(grace));
    session.finish()?;
    let events = session.events().snapshot();
    let fired = outcome.fired.clone();
    let latency = measure_latency(&events, &fired);
    let queries = count_queries(&events, config.mode);
    Ok(DetectionRun { outcome, events, fired, latency, queries })
}

/// Overhead and (with injections) latency for every target rate; writes
/// the report files when `out_dir` is set.
pub fn run_experiment(config: &ExperimentConfig) -> Result<MetricsReport, BenchError> {
    config.validate()?;
    let spec = config.workload;
    let reference = reference_output(&spec);
    let unit_rate = calibrate_unit_rate(&spec)?;
    if let Some(dir) = &config.out_dir {
        std::fs::create_dir_all(dir)?;
    }
    let targets: Vec<RateTarget> = config
        .rates
        .iter()
        .map(|&rate| RateTarget {
            rate,
            config: MonitorConfig::for_heart_rate(config.mode, rate),
            beats_every: ((unit_rate / rate).round() as u64).max(1),
        })
        .collect();
    let sweep = measure_overhead_sweep(
        &spec,
        &targets,
        config.repetitions,
        config.threshold_fraction,
        config.window_iteration,
        Some(&reference),
    )?;
    let mut rows = Vec::new();
    for (i, (target, samples)) in targets.iter().zip(sweep).enumerate() {
        let (rate, monitor) = (target.rate, target.config);
        let alpha: Vec<f64> = samples.iter().map(|s| s.e_alpha_s).collect();
        let beta: Vec<f64> = samples.iter().map(|s| s.e_beta_s).collect();
        let e_alpha_s = median(&alpha).unwrap_or(0.0);
        let e_beta_s = median(&beta).unwrap_or(0.0);
        let last = samples.last().expect("at least one repetition");
        let mut row = RateRow {
            target_rate: rate,
            detection_period_ms: monitor.detection_period_ms,
            beats_every: last.beats_every,
            e_alpha_s,
            e_beta_s,
            overhead: compute_overhead(e_alpha_s, e_beta_s)?,
            achieved_rate: median(&samples.iter().map(|s| s.achieved_rate).collect::<Vec<_>>()).unwrap_or(0.0),
            alpha_samples_s: alpha,
            beta_samples_s: beta,
            latency_ms: BTreeMap::new(),
            queries: last.queries.clone(),
        };
        if !config.injections.is_empty() {
            let detect_spec = WorkloadSpec { beats_every: last.beats_every, ..spec };
            for rep in 0..config.repetitions {
                let injections = jittered(&config.injections, config.seed, (i as u64) << 32 | rep as u64, config.jitter_ms);
                let log = (rep + 1 == config.repetitions)
                    .then(|| config.out_dir.as_ref().map(|d| d.join(format!("heartbeats-{rate}.log"))))
                    .flatten();
                let run = measure_detection(&detect_spec, monitor, &injections, log.as_deref())?;
                for entry in &run.latency {
                    row.latency_ms.entry(entry.behavior).or_insert_with(Vec::new).push(entry.latency_ms);
                }
                // An injection whose trigger was never reached counts as undetected.
                for inj in &injections {
                    let fired = run.fired.iter().any(|f| f.spec == *inj);
                    if !fired {
                        row.latency_ms.entry(inj.behavior).or_insert_with(Vec::new).push(None);
                    }
                }
                row.queries = run.queries;
            }
        }
        rows.push(row);
    }
    let report = MetricsReport {
        version: REPORT_VERSION,
        workload: spec,
        mode: config.mode,
        seed: config.seed,
        repetitions: config.repetitions,
        latency_origin: LATENCY_ORIGIN.into(),
        rows,
    };
    if let Some(dir) = &config.out_dir {
        write_report_files(&report, dir)?;
    }
    Ok(report)
}
