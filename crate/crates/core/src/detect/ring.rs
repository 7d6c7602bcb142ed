use super::{BehaviorState, DetectError, Observation};

/// Result of one clockwise walk.
#[derive(Debug, Clone, PartialEq)]
pub struct RingWalk {
    /// First alive thread found, or the walker itself after a fruitless lap.
    pub target: u32,
    /// Every thread classified on the way, in visiting order.
    pub visited: Vec<Observation>,
}

impl RingWalk {
    pub fn states(&self) -> Vec<BehaviorState> {
        self.visited.iter().map(|o| o.state).collect()
    }

    /// One sequence read per visited thread.
    pub fn queries(&self) -> usize {
        self.visited.len()
    }
}

/// Walks clockwise from the successor of `self_id`, classifying each thread
/// with `probe` until one is Running or BusyWaiting. Dead threads on the way
/// are still reported. A full lap without an alive thread returns `self_id`.
pub fn next_alive_neighbor<F>(ring: &[u32], self_id: u32, mut probe: F) -> Result<RingWalk, DetectError>
where
    F: FnMut(u32) -> Observation,
{
    let pos = ring.iter().position(|&id| id == self_id).ok_or(DetectError::NotInRing(self_id))?;
    if ring.len() < 2 {
        return Err(DetectError::SingletonRing);
    }
    let mut visited = Vec::new();
    for step in 1..ring.len() {
        let id = ring[(pos + step) % ring.len()];
        let obs = probe(id);
        visited.push(obs);
        if obs.state.is_alive() {
            return Ok(RingWalk { target: id, visited });
        }
    }
    Ok(RingWalk { target: self_id, visited })
}
