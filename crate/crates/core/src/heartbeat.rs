//! Heartbeat records, per-thread bounded sequences and the shared table.
//!
//! Each registered thread owns one [`HeartbeatHandle`] and is the only writer
//! of its sequence. Records live in a fixed ring of slots guarded by a
//! per-slot sequence stamp, so writers never wait on monitors and readers
//! discard any slot that changed while being copied.

use std::collections::BTreeMap;
use std::sync::atomic::{fence, AtomicBool, AtomicU32, AtomicU64, Ordering};
use std::sync::{Arc, RwLock};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clock::{self, NS_PER_MS, NS_PER_S};

/// One emission from a worker thread.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Heartbeat {
    pub thread_id: u32,
    pub seq_no: u64,
    pub timestamp_ns: u64,
    pub loop_id: u32,
    pub iteration: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CoreError {
    #[error("thread {0} is already registered")]
    DuplicateThreadId(u32),
    #[error("application already finished; no new threads may register")]
    AlreadyFinished,
    #[error("thread {0} emitted a heartbeat after its exit marker")]
    AfterExit(u32),
    #[error("thread {0} is not registered")]
    UnknownThreadId(u32),
    #[error("thread {thread_id}: timestamp {given} precedes previous heartbeat at {previous}")]
    TimestampRegression { thread_id: u32, previous: u64, given: u64 },
    #[error("invalid table snapshot: {0}")]
    InvalidSnapshot(String),
}

/// Point-in-time copy of one thread's sequence.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SequenceSnapshot {
    pub thread_id: u32,
    /// Retained records, oldest first, contiguous in `seq_no`.
    pub records: Vec<Heartbeat>,
    pub started: bool,
    pub exited: bool,
    /// Highest sequence number ever written; survives window eviction.
    pub last_seq_no: u64,
}

impl SequenceSnapshot {
    pub fn new(thread_id: u32) -> Self {
        Self { thread_id, ..Self::default() }
    }

    pub fn last_timestamp(&self) -> Option<u64> {
        self.records.last().map(|r| r.timestamp_ns)
    }

    /// Number of leading records stamped at or before `now_ns`.
    pub fn cut(&self, now_ns: u64) -> usize {
        self.records.partition_point(|r| r.timestamp_ns <= now_ns)
    }

    /// The sequence as it stood at `now_ns`: later records are dropped and
    /// the exit marker only counts once every retained record precedes it.
    pub fn as_of(&self, now_ns: u64) -> SequenceSnapshot {
        let cut = self.cut(now_ns);
        if cut == self.records.len() {
            return self.clone();
        }
        let records = self.records[..cut].to_vec();
        let started = self.started && (cut > 0 || self.records[0].seq_no > 1);
        SequenceSnapshot {
            thread_id: self.thread_id,
            last_seq_no: records.last().map_or(self.records[0].seq_no - 1, |r| r.seq_no),
            records,
            started,
            exited: false,
        }
    }
}

/// Heart rate in beats/s: records stamped in `(now - window, now]` divided by the window length.
pub fn compute_heart_rate(sequence: &SequenceSnapshot, now_ns: u64, rate_window_ms: u64) -> f64 {
    rate_over(&sequence.records, now_ns, rate_window_ms * NS_PER_MS)
}

pub(crate) fn rate_over(records: &[Heartbeat], now_ns: u64, window_ns: u64) -> f64 {
    debug_assert!(window_ns > 0);
    let lower = now_ns.saturating_sub(window_ns);
    let end = records.partition_point(|r| r.timestamp_ns <= now_ns);
    let start = records[..end].partition_point(|r| r.timestamp_ns <= lower);
    let in_window = end - start;
    // An empty window at the very start of the clock still divides by the full span.
    in_window as f64 / (window_ns as f64 / NS_PER_S)
}

struct Slot {
    // 0 while a write is in flight, otherwise the seq_no held by the slot.
    stamp: AtomicU64,
    timestamp_ns: AtomicU64,
    loop_id: AtomicU32,
    iteration: AtomicU64,
}

impl Slot {
    fn empty() -> Self {
        Self {
            stamp: AtomicU64::new(0),
            timestamp_ns: AtomicU64::new(0),
            loop_id: AtomicU32::new(0),
            iteration: AtomicU64::new(0),
        }
    }
}

struct SequenceCell {
    thread_id: u32,
    slots: Box<[Slot]>,
    last_seq: AtomicU64,
    // Only touched by the owning writer.
    last_ts: AtomicU64,
    started: AtomicBool,
    exited: AtomicBool,
}

const SNAPSHOT_RETRIES: usize = 8;

impl SequenceCell {
    fn new(thread_id: u32, capacity: usize) -> Self {
        Self {
            thread_id,
            slots: (0..capacity).map(|_| Slot::empty()).collect(),
            last_seq: AtomicU64::new(0),
            last_ts: AtomicU64::new(0),
            started: AtomicBool::new(false),
            exited: AtomicBool::new(false),
        }
    }

    fn slot(&self, seq: u64) -> &Slot {
        &self.slots[((seq - 1) % self.slots.len() as u64) as usize]
    }

    fn record(&self, loop_id: u32, iteration: u64, timestamp_ns: u64) -> Result<u64, CoreError> {
        if self.exited.load(Ordering::Acquire) {
            return Err(CoreError::AfterExit(self.thread_id));
        }
        let previous = self.last_ts.load(Ordering::Relaxed);
        let seq = self.last_seq.load(Ordering::Relaxed) + 1;
        if seq > 1 && timestamp_ns < previous {
            return Err(CoreError::TimestampRegression {
                thread_id: self.thread_id,
                previous,
                given: timestamp_ns,
            });
        }
        self.write_slot(seq, timestamp_ns, loop_id, iteration);
        self.last_ts.store(timestamp_ns, Ordering::Relaxed);
        self.started.store(true, Ordering::Relaxed);
        self.last_seq.store(seq, Ordering::Release);
        Ok(seq)
    }

    fn write_slot(&self, seq: u64, timestamp_ns: u64, loop_id: u32, iteration: u64) {
        let slot = self.slot(seq);
        slot.stamp.store(0, Ordering::Relaxed);
        fence(Ordering::Release);
        slot.timestamp_ns.store(timestamp_ns, Ordering::Relaxed);
        slot.loop_id.store(loop_id, Ordering::Relaxed);
        slot.iteration.store(iteration, Ordering::Relaxed);
        slot.stamp.store(seq, Ordering::Release);
    }

    fn read_slot(&self, seq: u64) -> Option<Heartbeat> {
        let slot = self.slot(seq);
        if slot.stamp.load(Ordering::Acquire) != seq {
            return None;
        }
        let timestamp_ns = slot.timestamp_ns.load(Ordering::Relaxed);
        let loop_id = slot.loop_id.load(Ordering::Relaxed);
        let iteration = slot.iteration.load(Ordering::Relaxed);
        fence(Ordering::Acquire);
        if slot.stamp.load(Ordering::Relaxed) != seq {
            return None;
        }
        Some(Heartbeat { thread_id: self.thread_id, seq_no: seq, timestamp_ns, loop_id, iteration })
    }

    /// Copies the newest records, walking back until a record stamped at or
    /// before `since_ns` has been included (all retained records when `None`).
    fn snapshot(&self, since_ns: Option<u64>) -> SequenceSnapshot {
        let mut attempt = 0;
        loop {
            let exited = self.exited.load(Ordering::Acquire);
            let started = self.started.load(Ordering::Acquire);
            let last = self.last_seq.load(Ordering::Acquire);
            let oldest = last.saturating_sub(self.slots.len() as u64 - 1).max(1);
            let mut records = Vec::new();
            let mut seq = last;
            while seq >= oldest && seq > 0 {
                let Some(hb) = self.read_slot(seq) else { break };
                records.push(hb);
                if since_ns.is_some_and(|s| hb.timestamp_ns <= s) {
                    break;
                }
                seq -= 1;
            }
            attempt += 1;
            // The newest slot can only be lost if the writer lapped the whole
            // ring during this read; retry a few times before settling.
            if last > 0 && records.is_empty() && attempt < SNAPSHOT_RETRIES {
                continue;
            }
            records.reverse();
            return SequenceSnapshot {
                thread_id: self.thread_id,
                records,
                started: started || last > 0,
                exited,
                last_seq_no: last,
            };
        }
    }

    fn mark_exit(&self) {
        self.started.store(true, Ordering::Release);
        self.exited.store(true, Ordering::Release);
    }
}

/// Write side of one thread's sequence. Exactly one exists per registered
/// thread; it may be shared by reference but only its owner should record.
pub struct HeartbeatHandle {
    cell: Arc<SequenceCell>,
}

impl HeartbeatHandle {
    pub fn thread_id(&self) -> u32 {
        self.cell.thread_id
    }

    /// Appends a heartbeat and returns its sequence number.
    pub fn record(&self, loop_id: u32, iteration: u64, timestamp_ns: u64) -> Result<u64, CoreError> {
        self.cell.record(loop_id, iteration, timestamp_ns)
    }

    /// Appends a heartbeat stamped with the shared clock.
    pub fn record_now(&self, loop_id: u32, iteration: u64) -> Result<u64, CoreError> {
        self.cell.record(loop_id, iteration, clock::now_ns())
    }

    /// Sets the exit marker. Idempotent.
    pub fn mark_exit(&self) {
        self.cell.mark_exit();
    }

    pub fn is_exited(&self) -> bool {
        self.cell.exited.load(Ordering::Acquire)
    }

    pub fn last_seq_no(&self) -> u64 {
        self.cell.last_seq.load(Ordering::Acquire)
    }
}

impl std::fmt::Debug for HeartbeatHandle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HeartbeatHandle")
            .field("thread_id", &self.cell.thread_id)
            .field("last_seq_no", &self.last_seq_no())
            .finish()
    }
}

pub fn record_heartbeat(
    handle: &HeartbeatHandle,
    loop_id: u32,
    iteration: u64,
    timestamp_ns: u64,
) -> Result<u64, CoreError> {
    handle.record(loop_id, iteration, timestamp_ns)
}

pub fn mark_exit(handle: &HeartbeatHandle) {
    handle.mark_exit()
}

#[derive(Default)]
struct Registry {
    cells: BTreeMap<u32, Arc<SequenceCell>>,
    ring: Vec<u32>,
}

/// Every registered thread's sequence plus the ring (clockwise) order.
pub struct HeartbeatTable {
    capacity: usize,
    registry: RwLock<Registry>,
    application_exited: AtomicBool,
}

/// Plain-data image of a table: sequences listed in ring order.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TableSnapshot {
    pub ring_order: Vec<u32>,
    pub sequences: Vec<SequenceSnapshot>,
}

impl HeartbeatTable {
    /// # Panics
    /// If `window_capacity < 2`.
    pub fn new(window_capacity: usize) -> Self {
        assert!(window_capacity >= 2, "window_capacity must be at least 2");
        Self {
            capacity: window_capacity,
            registry: RwLock::new(Registry::default()),
            application_exited: AtomicBool::new(false),
        }
    }

    pub fn window_capacity(&self) -> usize {
        self.capacity
    }

    pub fn register_thread(&self, thread_id: u32) -> Result<HeartbeatHandle, CoreError> {
        if self.application_exited() {
            return Err(CoreError::AlreadyFinished);
        }
        let mut reg = self.registry.write().unwrap();
        if reg.cells.contains_key(&thread_id) {
            return Err(CoreError::DuplicateThreadId(thread_id));
        }
        let cell = Arc::new(SequenceCell::new(thread_id, self.capacity));
        reg.cells.insert(thread_id, Arc::clone(&cell));
        reg.ring.push(thread_id);
        Ok(HeartbeatHandle { cell })
    }

    fn cell(&self, thread_id: u32) -> Result<Arc<SequenceCell>, CoreError> {
        self.registry
            .read()
            .unwrap()
            .cells
            .get(&thread_id)
            .cloned()
            .ok_or(CoreError::UnknownThreadId(thread_id))
    }

    pub fn read_sequence(&self, thread_id: u32) -> Result<SequenceSnapshot, CoreError> {
        Ok(self.cell(thread_id)?.snapshot(None))
    }

    /// Like [`read_sequence`](Self::read_sequence) but stops copying once a
    /// record at or before `since_ns` is included, so the result covers
    /// `(since_ns, newest]` plus one preceding record when retained.
    pub fn read_window(&self, thread_id: u32, since_ns: u64) -> Result<SequenceSnapshot, CoreError> {
        Ok(self.cell(thread_id)?.snapshot(Some(since_ns)))
    }

    pub fn ring_order(&self) -> Vec<u32> {
        self.registry.read().unwrap().ring.clone()
    }

    pub fn len(&self) -> usize {
        self.registry.read().unwrap().ring.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn contains(&self, thread_id: u32) -> bool {
        self.registry.read().unwrap().cells.contains_key(&thread_id)
    }

    pub fn mark_application_exited(&self) {
        self.application_exited.store(true, Ordering::Release);
    }

    pub fn application_exited(&self) -> bool {
        self.application_exited.load(Ordering::Acquire)
    }

    pub fn snapshot(&self) -> TableSnapshot {
        let ring_order = self.ring_order();
        let sequences = ring_order
            .iter()
            .map(|&id| self.read_sequence(id).expect("ring ids are registered"))
            .collect();
        TableSnapshot { ring_order, sequences }
    }

    /// Rebuilds a table from a snapshot, e.g. one loaded from a log file.
    pub fn from_snapshot(snapshot: &TableSnapshot, window_capacity: usize) -> Result<Self, CoreError> {
        let invalid = CoreError::InvalidSnapshot;
        if snapshot.ring_order.len() != snapshot.sequences.len() {
            return Err(invalid("ring order and sequence count differ".into()));
        }
        let table = Self::new(window_capacity);
        for (&id, seq) in snapshot.ring_order.iter().zip(&snapshot.sequences) {
            if seq.thread_id != id {
                return Err(invalid(format!("sequence for thread {} listed at ring slot of {id}", seq.thread_id)));
            }
            if seq.records.len() > window_capacity {
                return Err(invalid(format!("thread {id} holds more records than the window capacity")));
            }
            validate_records(seq).map_err(invalid)?;
            let handle = table.register_thread(id)?;
            let cell = &handle.cell;
            for r in &seq.records {
                cell.write_slot(r.seq_no, r.timestamp_ns, r.loop_id, r.iteration);
            }
            if let Some(last) = seq.records.last() {
                cell.last_ts.store(last.timestamp_ns, Ordering::Relaxed);
            }
            cell.last_seq.store(seq.last_seq_no, Ordering::Release);
            cell.started.store(seq.started, Ordering::Release);
            cell.exited.store(seq.exited, Ordering::Release);
        }
        Ok(table)
    }
}

fn validate_records(seq: &SequenceSnapshot) -> Result<(), String> {
    let id = seq.thread_id;
    if seq.exited && !seq.started {
        return Err(format!("thread {id} has an exit marker but no start marker"));
    }
    if !seq.records.is_empty() && !seq.started {
        return Err(format!("thread {id} has records but no start marker"));
    }
    for w in seq.records.windows(2) {
        if w[1].seq_no != w[0].seq_no + 1 {
            return Err(format!("thread {id}: seq_no {} follows {}", w[1].seq_no, w[0].seq_no));
        }
        if w[1].timestamp_ns < w[0].timestamp_ns {
            return Err(format!("thread {id}: timestamp regression at seq_no {}", w[1].seq_no));
        }
    }
    if seq.records.iter().any(|r| r.thread_id != id || r.seq_no == 0) {
        return Err(format!("thread {id}: foreign or zero-numbered record"));
    }
    let expected_last = seq.records.last().map_or(0, |r| r.seq_no);
    if seq.last_seq_no != expected_last {
        return Err(format!("thread {id}: last_seq_no {} does not match records", seq.last_seq_no));
    }
    Ok(())
}

impl std::fmt::Debug for HeartbeatTable {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HeartbeatTable")
            .field("capacity", &self.capacity)
            .field("ring_order", &self.ring_order())
            .field("application_exited", &self.application_exited())
            .finish()
    }
}
