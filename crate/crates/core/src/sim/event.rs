use std::cmp::Reverse;
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};

/// Declaration order is the tie-break order at equal timestamps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    ReportArrival,
    ModelArrival,
    RoundTrigger,
    ClientDropout,
}

/// Ordered by `(time, kind, client_id, round)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SimEvent {
    pub time: u64,
    pub kind: EventKind,
    pub client_id: u16,
    pub round: u64,
}

/// Min-queue of events.
#[derive(Debug, Default)]
pub struct EventQueue {
    heap: BinaryHeap<Reverse<SimEvent>>,
}

impl EventQueue {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, event: SimEvent) {
        self.heap.push(Reverse(event));
    }

    pub fn peek(&self) -> Option<&SimEvent> {
        self.heap.peek().map(|r| &r.0)
    }

    pub fn pop(&mut self) -> Option<SimEvent> {
        self.heap.pop().map(|r| r.0)
    }

    /// Pops the next event if it happens no later than `limit`.
    pub fn pop_until(&mut self, limit: u64) -> Option<SimEvent> {
        if self.peek()?.time <= limit {
            self.pop()
        } else {
            None
        }
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }
}
