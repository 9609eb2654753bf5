//! Deterministic virtual clock: an ordered pending-action set with
//! tie-breaking by insertion sequence. Single-owner; the run loop alternates
//! `advance` with action handling, so no wakeups can be lost.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ClockError {
    #[error("cannot schedule at {fire_at:.6}: clock already at {now:.6}")]
    PastTime { fire_at: f64, now: f64 },
    #[error("fire time must be finite")]
    NonFiniteTime,
    #[error("no pending actions")]
    Quiescent,
}

struct Pending<A> {
    fire_at: f64,
    seq: u64,
    action: A,
}

// BinaryHeap is a max-heap; invert the (fire_at, seq) order to pop earliest
// first, equal times in insertion order.
impl<A> Ord for Pending<A> {
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .fire_at
            .total_cmp(&self.fire_at)
            .then_with(|| other.seq.cmp(&self.seq))
    }
}

impl<A> PartialOrd for Pending<A> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<A> PartialEq for Pending<A> {
    fn eq(&self, other: &Self) -> bool {
        self.fire_at == other.fire_at && self.seq == other.seq
    }
}

impl<A> Eq for Pending<A> {}

/// Everything due at one instant, in scheduling order.
#[derive(Debug, PartialEq)]
pub struct Batch<A> {
    pub now: f64,
    pub actions: Vec<A>,
}

pub struct SimClock<A> {
    now: f64,
    seq: u64,
    heap: BinaryHeap<Pending<A>>,
}

impl<A> Default for SimClock<A> {
    fn default() -> Self {
        Self::new()
    }
}

impl<A> SimClock<A> {
    pub fn new() -> Self {
        SimClock { now: 0.0, seq: 0, heap: BinaryHeap::new() }
    }

    pub fn now(&self) -> f64 {
        self.now
    }

    pub fn pending(&self) -> usize {
        self.heap.len()
    }

    pub fn next_fire_at(&self) -> Option<f64> {
        self.heap.peek().map(|p| p.fire_at)
    }

    /// Queue an action; `fire_at == now` is allowed and fires on the next
    /// `advance` without moving time.
    pub fn schedule_at(&mut self, fire_at: f64, action: A) -> Result<u64, ClockError> {
        if !fire_at.is_finite() {
            return Err(ClockError::NonFiniteTime);
        }
        if fire_at < self.now {
            return Err(ClockError::PastTime { fire_at, now: self.now });
        }
        let seq = self.seq;
        self.seq += 1;
        self.heap.push(Pending { fire_at, seq, action });
        Ok(seq)
    }

    /// Move to the earliest pending instant and return every action due then.
    /// Ties (exactly equal fire times) fire in scheduling order.
    pub fn advance(&mut self) -> Result<Batch<A>, ClockError> {
        let first = self.heap.pop().ok_or(ClockError::Quiescent)?;
        self.now = first.fire_at;
        let mut actions = vec![first.action];
        while let Some(next) = self.heap.peek() {
            if next.fire_at == self.now {
                actions.push(self.heap.pop().expect("peeked").action);
            } else {
                break;
            }
        }
        Ok(Batch { now: self.now, actions })
    }
}
