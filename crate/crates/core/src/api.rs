//! One entry surface for instrumenting a program: a [`Session`] owns the
//! heartbeat table, the detectors and the rate knob, and the free functions
//! at the bottom drive a process-wide session with 0/1 status codes.
//!
//! ```no_run
//! use hbtm::api;
//!
//! assert_eq!(api::init(0), 0);
//! let workers: Vec<_> = (0..4)
//!     .map(|t| {
//!         std::thread::spawn(move || {
//!             for i in 0..3_000_000u64 {
//!                 // ... loop body ...
//!                 api::generate(t, 1, i);
//!             }
//!             api::thread_exit(t);
//!         })
//!     })
//!     .collect();
//! let monitor = std::thread::spawn(api::monitor);
//! for w in workers {
//!     w.join().unwrap();
//! }
//! monitor.join().unwrap();
//! assert_eq!(api::finished(), 0);
//! ```

use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, AtomicU64, AtomicU8, Ordering};
use std::sync::{Arc, Condvar, Mutex, OnceLock};
use std::thread::JoinHandle;

use thiserror::Error;

use crate::clock;
use crate::config::{ConfigError, MonitorConfig, MonitorMode};
use crate::detect::{
    run_centralized_monitor, BehaviorBoard, BehaviorState, Classifier, DecentralizedMonitor, DetectError,
    DetectionContext, DetectionEvent, EventLog, LivenessOracle, LivenessRegistry, MonitorStats, Observation,
};
use crate::heartbeat::{CoreError, HeartbeatHandle, HeartbeatTable};
use crate::persist::{persist_log_labeled, LogError};
use crate::rate::{
    adjust_heart_rate, average_heart_rate, default_threshold, scaled_interval, Adjustment, BeatInterval,
    RateAdjustment, RateError, DEFAULT_WINDOW_ITERATION,
};

pub const DEFAULT_LOG_PATH: &str = "heartbeats.log";
pub const DEFAULT_MAX_THREADS: u32 = 64;

#[derive(Debug, Error)]
pub enum SessionError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("decentralized monitoring needs at least 2 threads, got {0}")]
    TooFewThreads(u32),
    #[error("thread id {0} is outside the session's {1} slots")]
    UnknownThread(u32, u32),
    #[error("session already finished")]
    Finished,
    #[error("expected heart rate must be positive, got {0}")]
    InvalidRate(f64),
    #[error(transparent)]
    Rate(#[from] RateError),
    #[error(transparent)]
    Core(#[from] CoreError),
    #[error(transparent)]
    Detect(#[from] DetectError),
    #[error(transparent)]
    Log(#[from] LogError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SessionStatus {
    Initialized,
    Running,
    Finished,
}

impl SessionStatus {
    fn from_code(code: u8) -> Self {
        match code {
            0 => Self::Initialized,
            1 => Self::Running,
            _ => Self::Finished,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SessionOptions {
    pub config: MonitorConfig,
    /// Ids `0..threads` are registered up front, in ring order. Others
    /// register on their first heartbeat.
    pub threads: u32,
    pub max_threads: u32,
    /// Initial iterations between heartbeats for every thread.
    pub beats_every: u64,
    pub log_path: Option<PathBuf>,
    /// Written into the log header.
    pub label: Option<String>,
    /// Centralized mode only: run the monitor on a thread spawned at start.
    pub spawn_monitor: bool,
    /// When set, the monitor retunes `beats_every` toward this rate once
    /// per `window_iteration` heartbeats.
    pub expected_rate: Option<f64>,
    /// Tolerance band for retuning; defaults to 5% of the expected rate.
    pub threshold: Option<f64>,
    pub window_iteration: u64,
}

impl SessionOptions {
    pub fn new(mode: MonitorMode) -> Self {
        Self {
            config: MonitorConfig::new(mode),
            threads: 0,
            max_threads: DEFAULT_MAX_THREADS,
            beats_every: 1,
            log_path: None,
            label: None,
            spawn_monitor: true,
            expected_rate: None,
            threshold: None,
            window_iteration: DEFAULT_WINDOW_ITERATION,
        }
    }

    pub fn with_config(config: MonitorConfig) -> Self {
        Self { config, ..Self::new(config.mode) }
    }
}

struct Worker {
    handle: OnceLock<HeartbeatHandle>,
    interval: BeatInterval,
    attached: AtomicBool,
    ring: Mutex<DecentralizedMonitor>,
    next_tick: AtomicU64,
}

#[derive(Default)]
struct AdjustState {
    seq_marks: Vec<u64>,
    history: Vec<RateAdjustment>,
}

struct Shared {
    options: SessionOptions,
    ctx: DetectionContext,
    liveness: Arc<LivenessRegistry>,
    workers: Vec<Worker>,
    events: EventLog,
    stop: AtomicBool,
    status: AtomicU8,
    central_stats: Mutex<MonitorStats>,
    monitor_active: AtomicBool,
    done: Mutex<bool>,
    done_cv: Condvar,
    adjust: Mutex<AdjustState>,
}

/// Everything `finish` leaves behind.
#[derive(Debug, Clone, PartialEq)]
pub struct FinishReport {
    pub log_path: Option<PathBuf>,
    pub records_written: usize,
    pub monitor_stats: MonitorStats,
}

pub struct Session {
    shared: Arc<Shared>,
    monitor_thread: Mutex<Option<JoinHandle<()>>>,
    finish_report: Mutex<Option<FinishReport>>,
}

impl Session {
    pub fn start(options: SessionOptions) -> Result<Self, SessionError> {
        options.config.validate()?;
        if options.config.mode == MonitorMode::Decentralized && options.threads == 1 {
            return Err(SessionError::TooFewThreads(1));
        }
        if let Some(rate) = options.expected_rate {
            if !(rate.is_finite() && rate > 0.0) {
                return Err(SessionError::InvalidRate(rate));
            }
        }
        let max_threads = options.max_threads.max(options.threads);
        let table = Arc::new(HeartbeatTable::new(options.config.window_capacity));
        let liveness = Arc::new(LivenessRegistry::new());
        let oracle: Arc<dyn LivenessOracle> = liveness.clone();
        let slot_ids: Vec<u32> = (0..max_threads).collect();
        let ctx = DetectionContext {
            table: Arc::clone(&table),
            classifier: Classifier::new(options.config, oracle),
            board: Arc::new(BehaviorBoard::new(&slot_ids)),
        };
        let workers = (0..max_threads)
            .map(|id| Worker {
                handle: OnceLock::new(),
                interval: BeatInterval::new(options.beats_every),
                attached: AtomicBool::new(false),
                ring: Mutex::new(DecentralizedMonitor::new(id)),
                next_tick: AtomicU64::new(0),
            })
            .collect();
        let shared = Arc::new(Shared {
            options: SessionOptions { max_threads, ..options },
            ctx,
            liveness,
            workers,
            events: EventLog::new(),
            stop: AtomicBool::new(false),
            status: AtomicU8::new(0),
            central_stats: Mutex::new(MonitorStats::default()),
            monitor_active: AtomicBool::new(false),
            done: Mutex::new(false),
            done_cv: Condvar::new(),
            adjust: Mutex::new(AdjustState::default()),
        });
        for id in 0..shared.options.threads {
            shared.handle(id)?;
        }
        let session = Self { shared, monitor_thread: Mutex::new(None), finish_report: Mutex::new(None) };
        if session.mode() == MonitorMode::Centralized && session.shared.options.spawn_monitor {
            let shared = Arc::clone(&session.shared);
            shared.monitor_active.store(true, Ordering::Release);
            let handle = std::thread::Builder::new()
                .name("hbtm-monitor".into())
                .spawn(move || shared.run_central())
                .expect("spawn monitor thread");
            *session.monitor_thread.lock().unwrap() = Some(handle);
        }
        Ok(session)
    }

    pub fn mode(&self) -> MonitorMode {
        self.shared.options.config.mode
    }

    pub fn config(&self) -> &MonitorConfig {
        &self.shared.options.config
    }

    pub fn options(&self) -> &SessionOptions {
        &self.shared.options
    }

    pub fn status(&self) -> SessionStatus {
        SessionStatus::from_code(self.shared.status.load(Ordering::Acquire))
    }

    pub fn table(&self) -> &Arc<HeartbeatTable> {
        &self.shared.ctx.table
    }

    pub fn context(&self) -> &DetectionContext {
        &self.shared.ctx
    }

    pub fn events(&self) -> &EventLog {
        &self.shared.events
    }

    pub fn liveness(&self) -> &LivenessRegistry {
        &self.shared.liveness
    }

    /// Registers `thread_id` if needed and returns its write handle. Only the
    /// thread that owns the id should record through it.
    pub fn handle(&self, thread_id: u32) -> Result<&HeartbeatHandle, SessionError> {
        self.shared.handle(thread_id)
    }

    /// Emits a heartbeat when `iteration` is a multiple of the thread's
    /// iterations-per-beat. Returns whether one was emitted. Calls after
    /// finish are dropped.
    pub fn generate(&self, thread_id: u32, loop_id: u32, iteration: u64) -> bool {
        let Some(worker) = self.shared.workers.get(thread_id as usize) else { return false };
        if iteration % worker.interval.get() != 0 {
            return false;
        }
        self.beat(thread_id, loop_id, iteration)
    }

    /// Emits a heartbeat unconditionally, for loops that do their own
    /// gating. In decentralized mode this is also where the caller's ring
    /// monitor runs once per detection period.
    pub fn beat(&self, thread_id: u32, loop_id: u32, iteration: u64) -> bool {
        self.shared.beat(thread_id, loop_id, iteration).is_some()
    }

    /// [`Session::beat`] returning the recorded timestamp.
    pub fn beat_timed(&self, thread_id: u32, loop_id: u32, iteration: u64) -> Option<u64> {
        self.shared.beat(thread_id, loop_id, iteration)
    }

    /// Lets a waiting worker run its ring monitor without emitting a beat.
    pub fn idle(&self, thread_id: u32) {
        if self.mode() == MonitorMode::Decentralized && self.status() != SessionStatus::Finished {
            self.shared.tick_if_due(thread_id, clock::now_ns());
        }
    }

    /// Sets the exit marker for `thread_id`.
    pub fn thread_exit(&self, thread_id: u32) -> Result<(), SessionError> {
        self.handle(thread_id)?.mark_exit();
        self.shared.check_all_exited();
        Ok(())
    }

    pub fn beats_every(&self, thread_id: u32) -> u64 {
        self.shared.workers.get(thread_id as usize).map_or(1, |w| w.interval.get())
    }

    pub fn beat_interval(&self, thread_id: u32) -> Option<&BeatInterval> {
        self.shared.workers.get(thread_id as usize).map(|w| &w.interval)
    }

    pub fn set_beats_every(&self, iterations: u64) {
        for w in &self.shared.workers {
            w.interval.set(iterations);
        }
    }

    /// Classifies every registered thread at `now_ns` against the current
    /// board, without publishing.
    pub fn observe_all(&self, now_ns: u64) -> Vec<Observation> {
        let view = self.shared.ctx.board.view();
        self.table().ring_order().into_iter().map(|id| self.shared.ctx.observe(id, &view, now_ns)).collect()
    }

    /// Team average over Running and BusyWaiting threads right now.
    pub fn measured_rate(&self) -> Result<f64, RateError> {
        average_heart_rate(&self.observe_all(clock::now_ns()))
    }

    /// One measure → adjust → apply step toward `expected` beats/s.
    pub fn adjust_rate(&self, expected: f64) -> Result<Adjustment, SessionError> {
        if !(expected.is_finite() && expected > 0.0) {
            return Err(SessionError::InvalidRate(expected));
        }
        let average = self.measured_rate()?;
        Ok(self.shared.apply_rate_step(average, expected))
    }

    /// Retuning steps taken so far, oldest first.
    pub fn adjustments(&self) -> Vec<RateAdjustment> {
        self.shared.adjust.lock().unwrap().history.clone()
    }

    /// Blocks until monitoring ends. In centralized mode without a spawned
    /// monitor thread the loop runs here. Monitoring ends when every
    /// registered thread has exited or the session finishes.
    pub fn monitor(&self) -> Result<MonitorStats, SessionError> {
        if self.status() == SessionStatus::Finished {
            return Err(SessionError::Finished);
        }
        let shared = &self.shared;
        if self.mode() == MonitorMode::Centralized && !shared.monitor_active.swap(true, Ordering::AcqRel) {
            shared.run_central();
        } else {
            let mut done = shared.done.lock().unwrap();
            while !*done {
                done = shared.done_cv.wait(done).unwrap();
            }
        }
        Ok(self.monitor_stats())
    }

    /// Queries made so far: the central monitor's, or the sum over workers.
    pub fn monitor_stats(&self) -> MonitorStats {
        match self.mode() {
            MonitorMode::Centralized => *self.shared.central_stats.lock().unwrap(),
            MonitorMode::Decentralized => {
                let mut total = MonitorStats::default();
                for w in &self.shared.workers {
                    let s = w.ring.lock().unwrap().stats;
                    total.periods += s.periods;
                    total.queries += s.queries;
                }
                total
            }
        }
    }

    /// Per-worker ring monitor statistics (decentralized mode).
    pub fn worker_stats(&self, thread_id: u32) -> Option<MonitorStats> {
        self.shared.workers.get(thread_id as usize).map(|w| w.ring.lock().unwrap().stats)
    }

    /// Marks still-running threads exited, stops the monitors and writes the
    /// log. Threads whose OS thread already died without an exit marker keep
    /// that evidence. Idempotent.
    pub fn finish(&self) -> Result<FinishReport, SessionError> {
        let mut report = self.finish_report.lock().unwrap();
        if let Some(r) = report.as_ref() {
            return Ok(r.clone());
        }
        let shared = &self.shared;
        shared.status.store(2, Ordering::Release);
        for id in shared.ctx.table.ring_order() {
            let handle = shared.handle(id)?;
            let attached = shared.workers[id as usize].attached.load(Ordering::Acquire);
            if !attached || shared.liveness.is_alive(id) {
                handle.mark_exit();
            }
        }
        shared.ctx.table.mark_application_exited();
        shared.stop.store(true, Ordering::Release);
        shared.signal_done();
        if let Some(t) = self.monitor_thread.lock().unwrap().take() {
            let _ = t.join();
        }
        let mut done = FinishReport {
            log_path: shared.options.log_path.clone(),
            records_written: 0,
            monitor_stats: self.monitor_stats(),
        };
        let result = match &shared.options.log_path {
            Some(path) => persist_log_labeled(&shared.ctx.table, path, shared.options.label.as_deref()),
            None => Ok(0),
        };
        // Finished is terminal even when the log could not be written.
        *report = Some(done.clone());
        done.records_written = result?;
        *report = Some(done.clone());
        Ok(done)
    }
}

impl Drop for Session {
    fn drop(&mut self) {
        self.shared.stop.store(true, Ordering::Release);
        self.shared.signal_done();
        if let Some(t) = self.monitor_thread.get_mut().unwrap().take() {
            let _ = t.join();
        }
    }
}

impl Shared {
    fn handle(&self, thread_id: u32) -> Result<&HeartbeatHandle, SessionError> {
        let worker = self
            .workers
            .get(thread_id as usize)
            .ok_or(SessionError::UnknownThread(thread_id, self.options.max_threads))?;
        if let Some(h) = worker.handle.get() {
            return Ok(h);
        }
        let table = &self.ctx.table;
        Ok(worker.handle.get_or_init(|| table.register_thread(thread_id).expect("slot registers once")))
    }

    #[inline]
    fn beat(&self, thread_id: u32, loop_id: u32, iteration: u64) -> Option<u64> {
        if self.status.load(Ordering::Relaxed) == 2 {
            return None;
        }
        let handle = self.handle(thread_id).ok()?;
        let worker = &self.workers[thread_id as usize];
        if !worker.attached.load(Ordering::Relaxed) && !worker.attached.swap(true, Ordering::AcqRel) {
            self.liveness.attach_current_thread(thread_id);
            let _ = self.status.compare_exchange(0, 1, Ordering::AcqRel, Ordering::Relaxed);
        }
        let now = clock::now_ns();
        handle.record(loop_id, iteration, now).ok()?;
        if self.options.config.mode == MonitorMode::Decentralized {
            self.tick_if_due(thread_id, now);
        }
        Some(now)
    }

    fn tick_if_due(&self, thread_id: u32, now: u64) {
        let Some(worker) = self.workers.get(thread_id as usize) else { return };
        let due = worker.next_tick.load(Ordering::Relaxed);
        if now < due || self.stop.load(Ordering::Relaxed) {
            return;
        }
        let period = self.options.config.period_ns();
        let next = if due == 0 || now - due >= period { now + period } else { due + period };
        worker.next_tick.store(next, Ordering::Relaxed);
        if !self.ctx.table.contains(thread_id) {
            return;
        }
        let mut ring = worker.ring.lock().unwrap();
        match ring.tick(&self.ctx, now) {
            Ok(events) => self.events.extend(events),
            // fewer than two threads registered so far
            Err(_) => return,
        }
        drop(ring);
        if self.options.expected_rate.is_some() && self.is_designated_adjuster(thread_id) {
            self.maybe_auto_adjust(&self.ctx.board.view().observations());
        }
    }

    // The first thread in ring order that is not known to be dead adjusts.
    fn is_designated_adjuster(&self, thread_id: u32) -> bool {
        for id in self.ctx.table.ring_order() {
            if id == thread_id {
                return true;
            }
            match self.ctx.board.state(id) {
                Some(st) if !st.is_alive() => continue,
                _ => return false,
            }
        }
        false
    }

    fn run_central(&self) {
        let stats = run_centralized_monitor(&self.ctx, &self.stop, &self.events, |events: &[DetectionEvent]| {
            let _ = self.status.compare_exchange(0, 1, Ordering::AcqRel, Ordering::Relaxed);
            if self.options.expected_rate.is_some() {
                let obs: Vec<Observation> = events
                    .iter()
                    .map(|e| Observation { subject: e.subject_id, state: e.state, rate: e.observed_rate, steady: false })
                    .collect();
                self.maybe_auto_adjust(&obs);
            }
            self.check_all_exited();
        });
        let mut total = self.central_stats.lock().unwrap();
        total.periods += stats.periods;
        total.queries += stats.queries;
        drop(total);
        self.signal_done();
    }

    fn maybe_auto_adjust(&self, observations: &[Observation]) {
        let Some(expected) = self.options.expected_rate else { return };
        let Ok(mut state) = self.adjust.try_lock() else { return };
        let ids = self.ctx.table.ring_order();
        state.seq_marks.resize(self.workers.len(), 0);
        let mut fresh = 0u64;
        for &id in &ids {
            let last = self.workers[id as usize].handle.get().map_or(0, |h| h.last_seq_no());
            fresh += last.saturating_sub(state.seq_marks[id as usize]);
        }
        if ids.is_empty() || fresh / (ids.len() as u64) < self.options.window_iteration {
            return;
        }
        let Ok(average) = average_heart_rate(observations) else { return };
        for &id in &ids {
            state.seq_marks[id as usize] = self.workers[id as usize].handle.get().map_or(0, |h| h.last_seq_no());
        }
        drop(state);
        self.apply_rate_step(average, expected);
    }

    fn apply_rate_step(&self, average: f64, expected: f64) -> Adjustment {
        let threshold = self.options.threshold.unwrap_or_else(|| default_threshold(expected));
        let step = match adjust_heart_rate(average, expected, threshold, self.options.window_iteration) {
            Ok(step) => step,
            Err(_) => return Adjustment::Unchanged,
        };
        if let Adjustment::Retune(a) = step {
            // One multiplicative correction for the whole team.
            for w in &self.workers {
                w.interval.set(scaled_interval(w.interval.get(), a.iteration));
            }
            self.adjust.lock().unwrap().history.push(a);
        }
        step
    }

    fn check_all_exited(&self) {
        let ids = self.ctx.table.ring_order();
        if ids.is_empty() {
            return;
        }
        let all = ids
            .iter()
            .all(|&id| self.workers[id as usize].handle.get().is_some_and(|h| h.is_exited()));
        if all {
            self.stop.store(true, Ordering::Release);
            // a centralized loop signals once it has wound down
            if self.options.config.mode == MonitorMode::Decentralized || !self.monitor_active.load(Ordering::Acquire) {
                self.signal_done();
            }
        }
    }

    fn signal_done(&self) {
        let mut done = self.done.lock().unwrap();
        *done = true;
        self.done_cv.notify_all();
    }
}

impl std::fmt::Debug for Session {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Session")
            .field("mode", &self.mode())
            .field("status", &self.status())
            .field("threads", &self.table().len())
            .finish()
    }
}

/// Number of threads in `observations` currently in `state`.
pub fn count_in_state(observations: &[Observation], state: BehaviorState) -> usize {
    observations.iter().filter(|o| o.state == state).count()
}

// Process-wide session behind the status-code functions. Only one per run:
// once finished, it cannot be re-initialized.
static GLOBAL: OnceLock<Session> = OnceLock::new();

/// Starts the process-wide session; `mode` is 0 for centralized, 1 for
/// decentralized. Returns 0 on success, 1 on an invalid mode or a second call.
pub fn init(mode: i32) -> i32 {
    let Some(mode) = MonitorMode::from_code(mode) else { return 1 };
    let mut options = SessionOptions::new(mode);
    options.log_path = Some(PathBuf::from(DEFAULT_LOG_PATH));
    init_with(options)
}

pub fn init_with(options: SessionOptions) -> i32 {
    if GLOBAL.get().is_some() {
        return 1;
    }
    let Ok(session) = Session::start(options) else { return 1 };
    match GLOBAL.set(session) {
        Ok(()) => 0,
        Err(_) => 1,
    }
}

pub fn session() -> Option<&'static Session> {
    GLOBAL.get()
}

/// Heartbeat from worker `thread_num`, gated by its iterations-per-beat.
pub fn generate(thread_num: u32, loop_num: u32, iteration: u64) {
    if let Some(s) = GLOBAL.get() {
        s.generate(thread_num, loop_num, iteration);
    }
}

pub fn thread_exit(thread_num: u32) -> i32 {
    match GLOBAL.get().map(|s| s.thread_exit(thread_num)) {
        Some(Ok(())) => 0,
        _ => 1,
    }
}

/// Runs or waits for the monitor; see [`Session::monitor`].
pub fn monitor() -> i32 {
    match GLOBAL.get().map(Session::monitor) {
        Some(Ok(_)) => 0,
        _ => 1,
    }
}

/// Stops monitoring and saves the heartbeat log. 1 when the log could not
/// be written or no session exists.
pub fn finished() -> i32 {
    match GLOBAL.get().map(Session::finish) {
        Some(Ok(_)) => 0,
        _ => 1,
    }
}

/// One retuning step toward `expected_rate`, then the team rate measured
/// one rate window later. Non-positive targets are rejected and leave the
/// rate as it was; with no live thread the result is 0.
pub fn heart_rate_adjust(expected_rate: f64) -> f64 {
    let Some(s) = GLOBAL.get() else { return 0.0 };
    adjust_and_measure(s, expected_rate)
}

/// Session-level form of [`heart_rate_adjust`].
pub fn adjust_and_measure(session: &Session, expected_rate: f64) -> f64 {
    match session.adjust_rate(expected_rate) {
        Ok(Adjustment::Unchanged) | Err(SessionError::InvalidRate(_)) => session.measured_rate().unwrap_or(0.0),
        Ok(Adjustment::Retune(_)) => {
            std::thread::sleep(std::time::Duration::from_nanos(session.config().rate_window_ns()));
            session.measured_rate().unwrap_or(0.0)
        }
        Err(_) => 0.0,
    }
}
