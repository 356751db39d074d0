use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;

use thiserror::Error;

/// Fine-grained simulation time, in fine steps.
pub type Tick = u64;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum QueueError {
    #[error("event scheduled at tick {at} but the clock is already at {now}")]
    InThePast { at: Tick, now: Tick },
    #[error("event queue overflow: more than {limit} pending events")]
    Overflow { limit: usize },
}

struct Entry<E> {
    at: Tick,
    seq: u64,
    event: E,
}

impl<E> PartialEq for Entry<E> {
    fn eq(&self, other: &Self) -> bool {
        (self.at, self.seq) == (other.at, other.seq)
    }
}
impl<E> Eq for Entry<E> {}
impl<E> PartialOrd for Entry<E> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl<E> Ord for Entry<E> {
    fn cmp(&self, other: &Self) -> Ordering {
        (self.at, self.seq).cmp(&(other.at, other.seq))
    }
}

/// Pending events ordered by time, FIFO among equal times.
pub struct EventQueue<E> {
    heap: BinaryHeap<Reverse<Entry<E>>>,
    next_seq: u64,
    now: Tick,
    limit: usize,
}

impl<E> EventQueue<E> {
    pub fn new(limit: usize) -> Self {
        Self {
            heap: BinaryHeap::new(),
            next_seq: 0,
            now: 0,
            limit,
        }
    }

    pub fn now(&self) -> Tick {
        self.now
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }

    pub fn schedule(&mut self, at: Tick, event: E) -> Result<(), QueueError> {
        if at < self.now {
            return Err(QueueError::InThePast { at, now: self.now });
        }
        if self.heap.len() >= self.limit {
            return Err(QueueError::Overflow { limit: self.limit });
        }
        let seq = self.next_seq;
        self.next_seq += 1;
        self.heap.push(Reverse(Entry { at, seq, event }));
        Ok(())
    }

    pub fn peek_time(&self) -> Option<Tick> {
        self.heap.peek().map(|Reverse(e)| e.at)
    }

    /// Removes the earliest event and advances the clock to its time.
    pub fn pop(&mut self) -> Option<(Tick, E)> {
        let Reverse(e) = self.heap.pop()?;
        self.now = e.at;
        Some((e.at, e.event))
    }

    /// Moves the clock forward without an event (end of a fine step window).
    pub fn advance_to(&mut self, t: Tick) {
        debug_assert!(self.peek_time().is_none_or(|p| p >= t));
        self.now = self.now.max(t);
    }
}
