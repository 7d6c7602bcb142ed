//! Pi, Jacobi and matrix-multiplication kernels with heartbeat insertion
//! points, plus an injector that makes chosen threads busy-wait, block,
//! exit or fail.
//!
//! Each kernel counts work in units (Pi: one integration step, Jacobi: one
//! grid row, MatMul: one output element) and emits a heartbeat every
//! `beats_every` units. The probe type is generic so an uninstrumented
//! baseline compiles without any heartbeat code.

pub mod barrier;
pub mod kernels;

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;
use std::sync::{Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::api::Session;
use crate::clock::{self, NS_PER_MS, NS_PER_S};
use crate::config::MonitorMode;
use crate::detect::BehaviorState;
use barrier::TeamBarrier;
use kernels::{band, JacobiGrids};

pub const MAX_THREADS: u32 = 8;
pub const LOOP_ID: u32 = 1;
/// Busy-waiting threads beat at this fraction of their normal cadence.
pub const BUSY_CADENCE: f64 = 0.3;

/// Beat intervals averaged into a thread's normal cadence.
const RECENT_BEATS: usize = 16;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum WorkloadError {
    #[error("invalid workload spec: {0}")]
    InvalidSpec(String),
}

fn invalid<T>(msg: impl Into<String>) -> Result<T, WorkloadError> {
    Err(WorkloadError::InvalidSpec(msg.into()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum WorkloadKind {
    /// `iterations` integration steps per thread.
    Pi { iterations: u64 },
    Jacobi { grid: usize, cycles: u64 },
    MatMul { dim: usize },
}

impl WorkloadKind {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Pi { .. } => "pi",
            Self::Jacobi { .. } => "jacobi",
            Self::MatMul { .. } => "matmul",
        }
    }

    /// Desk-scale size for a kernel name.
    pub fn desk_default(name: &str) -> Option<Self> {
        match name {
            "pi" => Some(Self::Pi { iterations: 10_000_000 }),
            "jacobi" => Some(Self::Jacobi { grid: 256, cycles: 2000 }),
            "matmul" => Some(Self::MatMul { dim: 512 }),
            _ => None,
        }
    }

    /// Units between heartbeats used when nothing else is configured.
    pub fn default_beats_every(&self) -> u64 {
        match self {
            Self::Pi { .. } => 4_620_000,
            // 30000 point updates on a 256-wide grid
            Self::Jacobi { .. } => 118,
            Self::MatMul { .. } => 650,
        }
    }

    /// Work units thread `t` of `threads` performs over the whole run.
    pub fn units_for(&self, t: u32, threads: u32) -> u64 {
        match *self {
            Self::Pi { iterations } => iterations,
            Self::Jacobi { grid, cycles } => band(grid.saturating_sub(2), t as usize, threads as usize).len() as u64 * cycles,
            Self::MatMul { dim } => (band(dim, t as usize, threads as usize).len() * dim) as u64,
        }
    }

    /// Same kernel scaled so its total work is multiplied by roughly `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        let f = factor.max(0.0);
        match *self {
            Self::Pi { iterations } => Self::Pi { iterations: ((iterations as f64 * f).round() as u64).max(1) },
            Self::Jacobi { grid, cycles } => Self::Jacobi { grid, cycles: ((cycles as f64 * f).round() as u64).max(1) },
            Self::MatMul { dim } => Self::MatMul { dim: ((dim as f64 * f.cbrt()).round() as usize).max(1) },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorkloadSpec {
    pub kind: WorkloadKind,
    pub threads: u32,
    pub beats_every: u64,
}

impl WorkloadSpec {
    pub fn new(kind: WorkloadKind, threads: u32) -> Self {
        Self { kind, threads, beats_every: kind.default_beats_every() }
    }

    pub fn validate(&self, mode: Option<MonitorMode>) -> Result<(), WorkloadError> {
        if self.threads == 0 || self.threads > MAX_THREADS {
            return invalid(format!("thread count must be in 1..={MAX_THREADS}, got {}", self.threads));
        }
        if mode == Some(MonitorMode::Decentralized) && self.threads < 2 {
            return invalid("decentralized monitoring needs at least 2 threads");
        }
        if self.beats_every == 0 {
            return invalid("beats_every must be positive");
        }
        match self.kind {
            WorkloadKind::Pi { iterations: 0 } => invalid("Pi needs at least one iteration"),
            WorkloadKind::Jacobi { grid, .. } if grid < 3 => invalid("Jacobi grid must be at least 3"),
            WorkloadKind::MatMul { dim: 0 } => invalid("MatMul dimension must be positive"),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InjectedBehavior {
    BusyWaiting,
    ConditionalWaiting,
    Exit,
    Failure,
}

impl InjectedBehavior {
    pub const ALL: [Self; 4] = [Self::BusyWaiting, Self::ConditionalWaiting, Self::Exit, Self::Failure];

    pub fn state(self) -> BehaviorState {
        match self {
            Self::BusyWaiting => BehaviorState::BusyWaiting,
            Self::ConditionalWaiting => BehaviorState::ConditionalWaiting,
            Self::Exit => BehaviorState::Exit,
            Self::Failure => BehaviorState::Failure,
        }
    }

    /// Exit and Failure end the thread; the others last `duration_ms`.
    pub fn is_terminal(self) -> bool {
        matches!(self, Self::Exit | Self::Failure)
    }
}

impl fmt::Display for InjectedBehavior {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.state().as_str())
    }
}

impl FromStr for InjectedBehavior {
    type Err = WorkloadError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "busy_waiting" | "busywaiting" | "busy" => Ok(Self::BusyWaiting),
            "conditional_waiting" | "conditionalwaiting" | "waiting" | "wait" => Ok(Self::ConditionalWaiting),
            "exit" => Ok(Self::Exit),
            "failure" | "fail" => Ok(Self::Failure),
            other => invalid(format!("unknown behavior {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Trigger {
    /// Milliseconds after the workload starts.
    AtMs(u64),
    /// Once the thread has done this many work units.
    AtIteration(u64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct InjectionSpec {
    pub target_thread: u32,
    pub behavior: InjectedBehavior,
    pub start: Trigger,
    pub duration_ms: u64,
}

impl InjectionSpec {
    pub fn at_ms(behavior: InjectedBehavior, target_thread: u32, start_ms: u64, duration_ms: u64) -> Self {
        Self { target_thread, behavior, start: Trigger::AtMs(start_ms), duration_ms }
    }

    pub fn validate(&self, threads: u32) -> Result<(), WorkloadError> {
        if self.target_thread >= threads {
            return invalid(format!("injection targets thread {} of {threads}", self.target_thread));
        }
        if !self.behavior.is_terminal() && self.duration_ms == 0 {
            return invalid(format!("{} injection needs a positive duration", self.behavior));
        }
        Ok(())
    }
}

/// `<behavior>@<thread>:<ms>[+<duration_ms>]`; `i<n>` in place of `<ms>`
/// triggers after n work units.
impl FromStr for InjectionSpec {
    type Err = WorkloadError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || WorkloadError::InvalidSpec(format!("injection {s:?} is not <behavior>@<thread>:<ms>[+<dur>]"));
        let (behavior, rest) = s.split_once('@').ok_or_else(bad)?;
        let (thread, when) = rest.split_once(':').ok_or_else(bad)?;
        let (start, duration) = match when.split_once('+') {
            Some((a, d)) => (a, d.parse().map_err(|_| bad())?),
            None => (when, 0),
        };
        let start = match start.strip_prefix('i') {
            Some(n) => Trigger::AtIteration(n.parse().map_err(|_| bad())?),
            None => Trigger::AtMs(start.parse().map_err(|_| bad())?),
        };
        Ok(Self {
            target_thread: thread.parse().map_err(|_| bad())?,
            behavior: behavior.parse()?,
            start,
            duration_ms: duration,
        })
    }
}

impl fmt::Display for InjectionSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}@{}:", self.behavior, self.target_thread)?;
        match self.start {
            Trigger::AtMs(ms) => write!(f, "{ms}")?,
            Trigger::AtIteration(n) => write!(f, "i{n}")?,
        }
        if self.duration_ms > 0 {
            write!(f, "+{}", self.duration_ms)?;
        }
        Ok(())
    }
}

/// When an injection actually took effect, on the shared clock.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FiredInjection {
    pub spec: InjectionSpec,
    pub fired_at_ns: u64,
    /// End of a busy or blocked episode; None for Exit and Failure.
    pub ended_at_ns: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThreadEnd {
    Completed,
    Exited,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThreadOutcome {
    pub thread_id: u32,
    pub elapsed_s: f64,
    pub units: u64,
    pub beats: u64,
    pub end: ThreadEnd,
}

#[derive(Debug, Clone, PartialEq)]
pub enum KernelOutput {
    Pi(f64),
    Grid(Vec<f64>),
    Matrix(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorkloadOutcome {
    pub started_at_ns: u64,
    pub elapsed_s: f64,
    pub threads: Vec<ThreadOutcome>,
    pub output: KernelOutput,
    pub fired: Vec<FiredInjection>,
}

impl WorkloadOutcome {
    /// Mean per-thread heart rate over each thread's own run time.
    pub fn achieved_rate(&self) -> f64 {
        let rates: Vec<f64> = self
            .threads
            .iter()
            .filter(|t| t.elapsed_s > 0.0)
            .map(|t| t.beats as f64 / t.elapsed_s)
            .collect();
        if rates.is_empty() {
            0.0
        } else {
            rates.iter().sum::<f64>() / rates.len() as f64
        }
    }

    /// Work units per second of wall time, per thread, averaged.
    pub fn unit_rate(&self) -> f64 {
        let n = self.threads.len().max(1) as f64;
        self.threads.iter().map(|t| t.units as f64).sum::<f64>() / n / self.elapsed_s.max(1e-9)
    }
}

/// Heartbeat sink seen by the kernels.
pub trait Probe: Sync {
    const ENABLED: bool;
    /// Records a heartbeat; returns its timestamp.
    fn beat(&self, thread_id: u32, loop_id: u32, iteration: u64) -> Option<u64>;
    fn idle(&self, thread_id: u32);
    fn exit(&self, thread_id: u32);
    fn beats_every(&self, thread_id: u32) -> u64;
    /// How often a blocked worker should wake to call `idle`.
    fn idle_tick(&self) -> Option<Duration>;
}

/// No instrumentation at all.
pub struct NoProbe;

impl Probe for NoProbe {
    const ENABLED: bool = false;

    fn beat(&self, _: u32, _: u32, _: u64) -> Option<u64> {
        None
    }
    fn idle(&self, _: u32) {}
    fn exit(&self, _: u32) {}
    fn beats_every(&self, _: u32) -> u64 {
        u64::MAX
    }
    fn idle_tick(&self) -> Option<Duration> {
        None
    }
}

impl Probe for Session {
    const ENABLED: bool = true;

    #[inline]
    fn beat(&self, thread_id: u32, loop_id: u32, iteration: u64) -> Option<u64> {
        self.beat_timed(thread_id, loop_id, iteration)
    }
    fn idle(&self, thread_id: u32) {
        Session::idle(self, thread_id)
    }
    fn exit(&self, thread_id: u32) {
        let _ = self.thread_exit(thread_id);
    }
    #[inline]
    fn beats_every(&self, thread_id: u32) -> u64 {
        Session::beats_every(self, thread_id)
    }
    fn idle_tick(&self) -> Option<Duration> {
        (self.mode() == MonitorMode::Decentralized).then(|| Duration::from_nanos(self.config().period_ns()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Flow {
    Continue,
    Exit,
    Fail,
}

struct Pacer<'a, P: Probe> {
    probe: &'a P,
    tid: u32,
    start_ns: u64,
    countdown: u64,
    units: u64,
    beats: u64,
    /// Timestamps of the latest beats, oldest first.
    recent: VecDeque<u64>,
    pending: Vec<InjectionSpec>,
    fired: Vec<FiredInjection>,
}

impl<'a, P: Probe> Pacer<'a, P> {
    fn new(probe: &'a P, tid: u32, start_ns: u64, pending: Vec<InjectionSpec>) -> Self {
        let mut p = Self {
            probe,
            tid,
            start_ns,
            countdown: u64::MAX,
            units: 0,
            beats: 0,
            recent: VecDeque::with_capacity(RECENT_BEATS + 1),
            pending,
            fired: Vec::new(),
        };
        if P::ENABLED {
            // iteration 0 passes the every-k gate
            p.emit();
            p.countdown = probe.beats_every(tid).max(1);
        }
        p
    }

    fn emit(&mut self) -> u64 {
        let ts = self.probe.beat(self.tid, LOOP_ID, self.units).unwrap_or_else(clock::now_ns);
        self.beats += 1;
        if self.recent.len() > RECENT_BEATS {
            self.recent.pop_front();
        }
        self.recent.push_back(ts);
        ts
    }

    /// Runs `total` units through `work(from, to)` in beat-sized chunks.
    #[inline]
    fn drive(&mut self, total: u64, mut work: impl FnMut(u64, u64)) -> Flow {
        let mut done = 0;
        while done < total {
            let chunk = if P::ENABLED { self.countdown.min(total - done) } else { total - done };
            work(done, done + chunk);
            done += chunk;
            self.units += chunk;
            if P::ENABLED {
                self.countdown -= chunk;
                if self.countdown == 0 {
                    let flow = self.on_beat();
                    if flow != Flow::Continue {
                        return flow;
                    }
                }
            }
        }
        Flow::Continue
    }

    #[cold]
    fn on_beat(&mut self) -> Flow {
        let now = self.emit();
        self.countdown = self.probe.beats_every(self.tid).max(1);
        if self.pending.is_empty() {
            return Flow::Continue;
        }
        let due = self.pending.iter().position(|inj| match inj.start {
            Trigger::AtMs(ms) => now >= self.start_ns + ms * NS_PER_MS,
            Trigger::AtIteration(n) => self.units >= n,
        });
        let Some(i) = due else { return Flow::Continue };
        let spec = self.pending.remove(i);
        self.fire(spec, now)
    }

    fn fire(&mut self, spec: InjectionSpec, now: u64) -> Flow {
        let deadline = now + spec.duration_ms * NS_PER_MS;
        let mut record = FiredInjection { spec, fired_at_ns: now, ended_at_ns: None };
        let flow = match spec.behavior {
            InjectedBehavior::BusyWaiting => {
                let normal = if let (Some(first), Some(last), n @ 2..) =
                    (self.recent.front(), self.recent.back(), self.recent.len())
                {
                    (last - first) / (n as u64 - 1)
                } else {
                    self.probe.idle_tick().map_or(NS_PER_MS, |d| d.as_nanos() as u64)
                };
                let gap = ((normal as f64 / BUSY_CADENCE) as u64).max(1);
                let mut next = now + gap;
                loop {
                    let t = clock::now_ns();
                    if t >= deadline {
                        break;
                    }
                    if t >= next {
                        self.probe.beat(self.tid, LOOP_ID, self.units);
                        // A late beat delays the next one rather than bunching up.
                        next = next.max(t) + gap;
                    } else {
                        self.probe.idle(self.tid);
                        std::hint::spin_loop();
                    }
                }
                record.ended_at_ns = Some(clock::now_ns());
                Flow::Continue
            }
            InjectedBehavior::ConditionalWaiting => {
                // A condition nobody signals before the deadline.
                let lock = Mutex::new(());
                let cv = Condvar::new();
                let mut guard = lock.lock().unwrap();
                loop {
                    let t = clock::now_ns();
                    if t >= deadline {
                        break;
                    }
                    guard = cv.wait_timeout(guard, Duration::from_nanos(deadline - t)).unwrap().0;
                }
                record.ended_at_ns = Some(clock::now_ns());
                Flow::Continue
            }
            InjectedBehavior::Exit => Flow::Exit,
            InjectedBehavior::Failure => Flow::Fail,
        };
        self.fired.push(record);
        flow
    }
}

struct WorkerResult<T> {
    outcome: ThreadOutcome,
    fired: Vec<FiredInjection>,
    value: T,
}

fn finish_worker<P: Probe, T>(
    pacer: Pacer<'_, P>,
    flow: Flow,
    barrier: Option<&TeamBarrier>,
    value: T,
) -> WorkerResult<T> {
    let end = match flow {
        Flow::Continue => ThreadEnd::Completed,
        Flow::Exit => ThreadEnd::Exited,
        Flow::Fail => ThreadEnd::Failed,
    };
    // A failing thread just stops: no exit marker.
    if end != ThreadEnd::Failed {
        pacer.probe.exit(pacer.tid);
    }
    if let Some(b) = barrier {
        b.leave();
    }
    let elapsed_s = (clock::now_ns() - pacer.start_ns) as f64 / NS_PER_S;
    WorkerResult {
        outcome: ThreadOutcome { thread_id: pacer.tid, elapsed_s, units: pacer.units, beats: pacer.beats, end },
        fired: pacer.fired,
        value,
    }
}

/// Runs `spec` on `threads` OS threads, reporting heartbeats to `session`
/// when given. Injections require a session.
pub fn run_workload(
    spec: &WorkloadSpec,
    session: Option<&Session>,
    injections: &[InjectionSpec],
) -> Result<WorkloadOutcome, WorkloadError> {
    spec.validate(session.map(Session::mode))?;
    for inj in injections {
        inj.validate(spec.threads)?;
    }
    match session {
        Some(s) => {
            for t in 0..spec.threads {
                s.handle(t).map_err(|e| WorkloadError::InvalidSpec(e.to_string()))?;
            }
            s.set_beats_every(spec.beats_every);
            Ok(run_with(spec, s, injections))
        }
        None if !injections.is_empty() => invalid("injections need a session"),
        None => Ok(run_with(spec, &NoProbe, injections)),
    }
}

/// Generic runner; `NoProbe` gives the uninstrumented baseline.
pub fn run_with<P: Probe>(spec: &WorkloadSpec, probe: &P, injections: &[InjectionSpec]) -> WorkloadOutcome {
    let threads = spec.threads;
    let pending = |t: u32| -> Vec<InjectionSpec> {
        injections.iter().copied().filter(|i| i.target_thread == t).collect()
    };
    let start_ns = clock::now_ns();
    let (results, output) = match spec.kind {
        WorkloadKind::Pi { iterations } => {
            let total = iterations * threads as u64;
            let results: Vec<WorkerResult<f64>> = std::thread::scope(|s| {
                let handles: Vec<_> = (0..threads)
                    .map(|t| {
                        let pending = pending(t);
                        s.spawn(move || {
                            let mut pacer = Pacer::new(probe, t, start_ns, pending);
                            let offset = t as u64 * iterations;
                            let mut acc = 0.0;
                            let flow = pacer.drive(iterations, |a, b| {
                                kernels::pi_partial(&mut acc, offset + a, offset + b, total)
                            });
                            finish_worker(pacer, flow, None, acc)
                        })
                    })
                    .collect();
                handles.into_iter().map(|h| h.join().expect("worker panicked")).collect()
            });
            let sum: f64 = results.iter().map(|r| r.value).sum();
            let pi = sum / total as f64;
            (results.into_iter().map(|r| (r.outcome, r.fired)).collect::<Vec<_>>(), KernelOutput::Pi(pi))
        }
        WorkloadKind::Jacobi { grid, cycles } => {
            let grids = JacobiGrids::new(grid);
            let barrier = TeamBarrier::new(threads as usize);
            let results: Vec<WorkerResult<()>> = std::thread::scope(|s| {
                let handles: Vec<_> = (0..threads)
                    .map(|t| {
                        let pending = pending(t);
                        let (grids, barrier) = (&grids, &barrier);
                        s.spawn(move || {
                            let rows = band(grid - 2, t as usize, threads as usize);
                            let mut pacer = Pacer::new(probe, t, start_ns, pending);
                            let tick = probe.idle_tick();
                            let mut flow = Flow::Continue;
                            for cycle in 0..cycles {
                                flow = pacer.drive(rows.len() as u64, |a, b| {
                                    for r in a..b {
                                        grids.update_row(cycle, rows.start + 1 + r as usize);
                                    }
                                });
                                if flow != Flow::Continue {
                                    break;
                                }
                                barrier.wait_with(tick, || probe.idle(t));
                            }
                            finish_worker(pacer, flow, Some(barrier), ())
                        })
                    })
                    .collect();
                handles.into_iter().map(|h| h.join().expect("worker panicked")).collect()
            });
            (results.into_iter().map(|r| (r.outcome, r.fired)).collect(), KernelOutput::Grid(grids.result(cycles)))
        }
        WorkloadKind::MatMul { dim } => {
            let (a, b) = kernels::matmul_inputs(dim);
            let bt = kernels::transpose(&b, dim);
            let results: Vec<WorkerResult<Vec<f64>>> = std::thread::scope(|s| {
                let handles: Vec<_> = (0..threads)
                    .map(|t| {
                        let pending = pending(t);
                        let (a, bt) = (&a, &bt);
                        s.spawn(move || {
                            let rows = band(dim, t as usize, threads as usize);
                            let mut out = vec![0.0; rows.len() * dim];
                            let mut pacer = Pacer::new(probe, t, start_ns, pending);
                            let flow = pacer.drive(out.len() as u64, |from, to| {
                                for e in from as usize..to as usize {
                                    out[e] = kernels::matmul_element(a, bt, dim, rows.start + e / dim, e % dim);
                                }
                            });
                            finish_worker(pacer, flow, None, out)
                        })
                    })
                    .collect();
                handles.into_iter().map(|h| h.join().expect("worker panicked")).collect()
            });
            let mut c = Vec::with_capacity(dim * dim);
            for r in &results {
                c.extend_from_slice(&r.value);
            }
            (results.into_iter().map(|r| (r.outcome, r.fired)).collect(), KernelOutput::Matrix(c))
        }
    };
    let elapsed_s = (clock::now_ns() - start_ns) as f64 / NS_PER_S;
    let mut threads_out = Vec::new();
    let mut fired = Vec::new();
    for (o, f) in results {
        threads_out.push(o);
        fired.extend(f);
    }
    fired.sort_by_key(|f| f.fired_at_ns);
    WorkloadOutcome { started_at_ns: start_ns, elapsed_s, threads: threads_out, output, fired }
}

/// Sequential result for `spec`'s kernel.
pub fn reference_output(spec: &WorkloadSpec) -> KernelOutput {
    match spec.kind {
        WorkloadKind::Pi { iterations } => KernelOutput::Pi(kernels::pi_reference(iterations * spec.threads as u64)),
        WorkloadKind::Jacobi { grid, cycles } => KernelOutput::Grid(kernels::jacobi_reference(grid, cycles)),
        WorkloadKind::MatMul { dim } => {
            let (a, b) = kernels::matmul_inputs(dim);
            KernelOutput::Matrix(kernels::matmul_reference(&a, &b, dim))
        }
    }
}

/// Error against the sequential reference: absolute for Pi, max relative
/// for grids and matrices.
pub fn output_error(got: &KernelOutput, want: &KernelOutput) -> f64 {
    match (got, want) {
        (KernelOutput::Pi(g), KernelOutput::Pi(w)) => (g - w).abs(),
        (KernelOutput::Grid(g), KernelOutput::Grid(w)) | (KernelOutput::Matrix(g), KernelOutput::Matrix(w)) => {
            if g.len() != w.len() {
                return f64::INFINITY;
            }
            kernels::max_relative_error(g, w)
        }
        _ => f64::INFINITY,
    }
}

/// Tolerance for `output_error` per kernel.
pub fn tolerance(kind: &WorkloadKind) -> f64 {
    match kind {
        WorkloadKind::Pi { .. } => 1e-6,
        _ => 1e-9,
    }
}
