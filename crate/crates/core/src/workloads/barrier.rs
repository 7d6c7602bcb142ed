use std::sync::{Condvar, Mutex};
use std::time::Duration;

struct State {
    parties: usize,
    arrived: usize,
    generation: u64,
}

/// Cyclic barrier whose party count shrinks when a thread leaves the team,
/// so exiting or failing workers do not strand the rest. Waiters can run a
/// callback while they wait.
pub struct TeamBarrier {
    state: Mutex<State>,
    cv: Condvar,
}

impl TeamBarrier {
    pub fn new(parties: usize) -> Self {
        Self { state: Mutex::new(State { parties, arrived: 0, generation: 0 }), cv: Condvar::new() }
    }

    pub fn wait(&self) {
        self.wait_with(None, || {});
    }

    /// Waits for the rest of the team, calling `idle` every `tick` while
    /// blocked.
    pub fn wait_with(&self, tick: Option<Duration>, mut idle: impl FnMut()) {
        let mut st = self.state.lock().unwrap();
        let gen = st.generation;
        st.arrived += 1;
        if st.arrived >= st.parties {
            Self::release(&mut st);
            self.cv.notify_all();
            return;
        }
        while st.generation == gen {
            st = match tick {
                Some(t) => {
                    let (guard, timeout) = self.cv.wait_timeout(st, t).unwrap();
                    if timeout.timed_out() && guard.generation == gen {
                        drop(guard);
                        idle();
                        self.state.lock().unwrap()
                    } else {
                        guard
                    }
                }
                None => self.cv.wait(st).unwrap(),
            };
        }
    }

    /// Removes the caller from the team for good.
    pub fn leave(&self) {
        let mut st = self.state.lock().unwrap();
        st.parties -= 1;
        if st.arrived > 0 && st.arrived >= st.parties {
            Self::release(&mut st);
            self.cv.notify_all();
        }
    }

    fn release(st: &mut State) {
        st.arrived = 0;
        st.generation += 1;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicUsize, Ordering};

    #[test]
    fn cycles_in_lockstep() {
        let b = TeamBarrier::new(3);
        let counter = AtomicUsize::new(0);
        std::thread::scope(|s| {
            for _ in 0..3 {
                s.spawn(|| {
                    for round in 0..50 {
                        counter.fetch_add(1, Ordering::SeqCst);
                        b.wait();
                        assert!(counter.load(Ordering::SeqCst) >= 3 * (round + 1));
                        b.wait();
                    }
                });
            }
        });
        assert_eq!(counter.load(Ordering::SeqCst), 150);
    }

    #[test]
    fn leaving_releases_waiters() {
        let b = TeamBarrier::new(3);
        let idles = AtomicUsize::new(0);
        std::thread::scope(|s| {
            s.spawn(|| b.wait_with(Some(Duration::from_millis(1)), || {
                idles.fetch_add(1, Ordering::SeqCst);
            }));
            s.spawn(|| b.wait());
            std::thread::sleep(Duration::from_millis(20));
            b.leave();
        });
        assert!(idles.load(Ordering::SeqCst) > 0);
    }
}
