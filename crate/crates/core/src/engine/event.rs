//! The event queue: a min-heap ordered by (time, kind priority, sequence).

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::domain::SimTime;

/// Event kinds in priority order at equal times. Control commands land
/// before the TTI they configure, and HARQ feedback due at a boundary is
/// known before that boundary's scheduling pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum EventKind {
    Control,
    Confirmation,
    Timer,
    TrafficArrival,
    TtiTick,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
#[error("event at {at} scheduled while the clock is at {now}")]
pub struct CausalityError {
    pub now: SimTime,
    pub at: SimTime,
}

struct Entry<P> {
    time: SimTime,
    kind: EventKind,
    seq: u64,
    payload: P,
}

impl<P> Entry<P> {
    fn key(&self) -> (SimTime, EventKind, u64) {
        (self.time, self.kind, self.seq)
    }
}

impl<P> PartialEq for Entry<P> {
    fn eq(&self, other: &Self) -> bool {
        self.key() == other.key()
    }
}

impl<P> Eq for Entry<P> {}

impl<P> PartialOrd for Entry<P> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<P> Ord for Entry<P> {
    // Reversed: BinaryHeap is a max-heap.
    fn cmp(&self, other: &Self) -> Ordering {
        other.key().cmp(&self.key())
    }
}

pub struct EventQueue<P> {
    heap: BinaryHeap<Entry<P>>,
    seq: u64,
    now: SimTime,
}

impl<P> Default for EventQueue<P> {
    fn default() -> Self {
        Self::new()
    }
}

impl<P> EventQueue<P> {
    pub fn new() -> Self {
        EventQueue {
            heap: BinaryHeap::new(),
            seq: 0,
            now: SimTime::ZERO,
        }
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    pub fn schedule(&mut self, time: SimTime, kind: EventKind, payload: P) -> Result<(), CausalityError> {
        if time < self.now {
            return Err(CausalityError { now: self.now, at: time });
        }
        self.heap.push(Entry {
            time,
            kind,
            seq: self.seq,
            payload,
        });
        self.seq += 1;
        Ok(())
    }

    /// Pop the next event and advance the clock to it.
    pub fn pop(&mut self) -> Option<(SimTime, EventKind, P)> {
        let e = self.heap.pop()?;
        self.now = e.time;
        Some((e.time, e.kind, e.payload))
    }

    pub fn peek_time(&self) -> Option<SimTime> {
        self.heap.peek().map(|e| e.time)
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn control_before_tick_at_equal_time() {
        let mut q = EventQueue::new();
        q.schedule(SimTime(5), EventKind::TtiTick, "tick").unwrap();
        q.schedule(SimTime(5), EventKind::Control, "ctrl").unwrap();
        q.schedule(SimTime(4), EventKind::TtiTick, "early").unwrap();
        assert_eq!(q.pop().unwrap().2, "early");
        assert_eq!(q.pop().unwrap().2, "ctrl");
        assert_eq!(q.pop().unwrap().2, "tick");
        assert!(q.pop().is_none());
    }

    #[test]
    fn past_events_are_rejected() {
        let mut q = EventQueue::new();
        q.schedule(SimTime(10), EventKind::Timer, ()).unwrap();
        q.pop();
        assert_eq!(
            q.schedule(SimTime(9), EventKind::Timer, ()),
            Err(CausalityError { now: SimTime(10), at: SimTime(9) })
        );
        assert!(q.schedule(SimTime(10), EventKind::Timer, ()).is_ok());
    }

    proptest! {
        #[test]
        fn pops_in_time_kind_seq_order(items in prop::collection::vec((0u64..50, 0usize..5), 1..200)) {
            let kinds = [
                EventKind::Control,
                EventKind::Confirmation,
                EventKind::Timer,
                EventKind::TrafficArrival,
                EventKind::TtiTick,
            ];
            let mut q = EventQueue::new();
            for (i, &(t, k)) in items.iter().enumerate() {
                q.schedule(SimTime(t), kinds[k], i).unwrap();
            }
            let mut expected: Vec<(u64, EventKind, usize)> =
                items.iter().enumerate().map(|(i, &(t, k))| (t, kinds[k], i)).collect();
            expected.sort();
            let mut got = Vec::new();
            while let Some((t, k, i)) = q.pop() {
                got.push((t.0, k, i));
            }
            prop_assert_eq!(got, expected);
        }
    }
}
