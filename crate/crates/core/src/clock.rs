//! Process-wide monotonic clock.
//!
//! Every timestamp in the crate (heartbeats, detection events, injection
//! triggers, run timings) is nanoseconds since the first call to [`now_ns`].

use std::sync::OnceLock;
use std::time::{Duration, Instant};

static EPOCH: OnceLock<Instant> = OnceLock::new();

fn epoch() -> Instant {
    *EPOCH.get_or_init(Instant::now)
}

/// Nanoseconds elapsed on the shared monotonic clock.
#[inline]
pub fn now_ns() -> u64 {
    epoch().elapsed().as_nanos() as u64
}

/// Converts a clock reading back into an `Instant`.
pub fn instant_at(ns: u64) -> Instant {
    epoch() + Duration::from_nanos(ns)
}

/// Sleeps until the clock reads at least `deadline_ns`.
pub fn sleep_until(deadline_ns: u64) {
    let now = now_ns();
    if deadline_ns > now {
        std::thread::sleep(Duration::from_nanos(deadline_ns - now));
    }
}

pub const NS_PER_MS: u64 = 1_000_000;
pub const NS_PER_S: f64 = 1e9;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clock_is_monotonic() {
        let mut prev = now_ns();
        for _ in 0..1000 {
            let t = now_ns();
            assert!(t >= prev);
            prev = t;
        }
    }

    #[test]
    fn sleep_until_reaches_deadline() {
        let deadline = now_ns() + 2 * NS_PER_MS;
        sleep_until(deadline);
        assert!(now_ns() >= deadline);
        assert_eq!(instant_at(deadline).duration_since(instant_at(0)).as_nanos() as u64, deadline);
    }
}
