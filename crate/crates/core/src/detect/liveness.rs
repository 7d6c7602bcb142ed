use std::cell::RefCell;
use std::collections::{BTreeMap, BTreeSet};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, RwLock};

/// Answers whether the OS thread behind a thread id is still alive.
/// Blocked threads are alive; returned, panicked or never-attached ones are not.
pub trait LivenessOracle: Send + Sync {
    fn is_alive(&self, thread_id: u32) -> bool;
}

impl<F> LivenessOracle for F
where
    F: Fn(u32) -> bool + Send + Sync,
{
    fn is_alive(&self, thread_id: u32) -> bool {
        self(thread_id)
    }
}

/// Fixed answers, for frozen traces and scripted tests.
#[derive(Debug, Clone, Default)]
pub struct StaticLiveness {
    dead: BTreeSet<u32>,
    all_dead: bool,
}

impl StaticLiveness {
    pub const fn all_alive() -> Self {
        Self { dead: BTreeSet::new(), all_dead: false }
    }

    pub const fn all_dead() -> Self {
        Self { dead: BTreeSet::new(), all_dead: true }
    }

    pub fn dead(ids: impl IntoIterator<Item = u32>) -> Self {
        Self { dead: ids.into_iter().collect(), all_dead: false }
    }
}

impl LivenessOracle for StaticLiveness {
    fn is_alive(&self, thread_id: u32) -> bool {
        !self.all_dead && !self.dead.contains(&thread_id)
    }
}

/// Join-state probe: a thread id is alive while some OS thread holds its
/// flag. The flag drops when that thread ends, whether it returned or
/// unwound.
#[derive(Debug, Default)]
pub struct LivenessRegistry {
    flags: RwLock<BTreeMap<u32, Arc<AtomicBool>>>,
}

thread_local! {
    static ATTACHED: RefCell<ThreadFlags> = const { RefCell::new(ThreadFlags(Vec::new())) };
}

struct ThreadFlags(Vec<Arc<AtomicBool>>);

impl Drop for ThreadFlags {
    fn drop(&mut self) {
        for flag in &self.0 {
            flag.store(false, Ordering::Release);
        }
    }
}

/// Holds a thread id alive until dropped.
#[derive(Debug)]
pub struct AliveGuard {
    flag: Arc<AtomicBool>,
}

impl Drop for AliveGuard {
    fn drop(&mut self) {
        self.flag.store(false, Ordering::Release);
    }
}

impl LivenessRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    fn flag(&self, thread_id: u32) -> Arc<AtomicBool> {
        if let Some(f) = self.flags.read().unwrap().get(&thread_id) {
            return Arc::clone(f);
        }
        let mut flags = self.flags.write().unwrap();
        Arc::clone(flags.entry(thread_id).or_default())
    }

    /// Marks `thread_id` alive for as long as the returned guard lives.
    pub fn enter(&self, thread_id: u32) -> AliveGuard {
        let flag = self.flag(thread_id);
        flag.store(true, Ordering::Release);
        AliveGuard { flag }
    }

    /// Ties `thread_id` to the calling OS thread: it reads dead once that
    /// thread terminates.
    pub fn attach_current_thread(&self, thread_id: u32) {
        let flag = self.flag(thread_id);
        flag.store(true, Ordering::Release);
        ATTACHED.with(|a| a.borrow_mut().0.push(flag));
    }

    pub fn mark_dead(&self, thread_id: u32) {
        self.flag(thread_id).store(false, Ordering::Release);
    }
}

impl LivenessOracle for LivenessRegistry {
    fn is_alive(&self, thread_id: u32) -> bool {
        self.flags
            .read()
            .unwrap()
            .get(&thread_id)
            .is_some_and(|f| f.load(Ordering::Acquire))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn attached_thread_dies_with_its_os_thread() {
        let reg = Arc::new(LivenessRegistry::new());
        assert!(!reg.is_alive(4));
        let (tx, rx) = std::sync::mpsc::channel();
        let (go_tx, go_rx) = std::sync::mpsc::channel::<()>();
        let r = Arc::clone(&reg);
        let t = std::thread::spawn(move || {
            r.attach_current_thread(4);
            tx.send(()).unwrap();
            go_rx.recv().unwrap();
        });
        rx.recv().unwrap();
        assert!(reg.is_alive(4));
        go_tx.send(()).unwrap();
        t.join().unwrap();
        assert!(!reg.is_alive(4));
    }

    #[test]
    fn panicking_thread_reads_dead() {
        let reg = Arc::new(LivenessRegistry::new());
        let r = Arc::clone(&reg);
        let t = std::thread::spawn(move || {
            let _g = r.enter(1);
            panic!("boom");
        });
        assert!(t.join().is_err());
        assert!(!reg.is_alive(1));
    }

    #[test]
    fn static_and_closure_oracles() {
        let s = StaticLiveness::dead([2]);
        assert!(s.is_alive(1));
        assert!(!s.is_alive(2));
        assert!(!StaticLiveness::all_dead().is_alive(0));
        let f = |id: u32| id % 2 == 0;
        assert!(f.is_alive(2));
        assert!(!LivenessOracle::is_alive(&f, 3));
    }
}
