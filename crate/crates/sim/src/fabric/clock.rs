//! Discrete-event scheduler. Events fire in `(tick, seq)` order, where
//! `seq` is the insertion counter, so same-tick events keep FIFO order.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use hybrid_core::timeseries::Tick;

pub const TICKS_PER_MS: Tick = 1_000;
pub const TICKS_PER_SECOND: Tick = 1_000_000;

pub fn ms_to_ticks(ms: f64) -> Tick {
    (ms * TICKS_PER_MS as f64).round().max(0.0) as Tick
}

pub fn ticks_to_ms(ticks: Tick) -> f64 {
    ticks as f64 / TICKS_PER_MS as f64
}

pub fn ticks_to_seconds(ticks: Tick) -> f64 {
    ticks as f64 / TICKS_PER_SECOND as f64
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Scheduled<E> {
    pub tick: Tick,
    pub seq: u64,
    pub event: E,
}

#[derive(Debug)]
struct Entry<E> {
    key: (Tick, u64),
    event: E,
}

impl<E> PartialEq for Entry<E> {
    fn eq(&self, other: &Self) -> bool {
        self.key == other.key
    }
}

impl<E> Eq for Entry<E> {}

impl<E> PartialOrd for Entry<E> {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl<E> Ord for Entry<E> {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.key.cmp(&other.key)
    }
}

#[derive(Debug)]
pub struct Scheduler<E> {
    heap: BinaryHeap<Reverse<Entry<E>>>,
    next_seq: u64,
    now: Tick,
}

impl<E> Default for Scheduler<E> {
    fn default() -> Self {
        Self {
            heap: BinaryHeap::new(),
            next_seq: 0,
            now: 0,
        }
    }
}

impl<E> Scheduler<E> {
    pub fn new() -> Self {
        Self::default()
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

    /// Schedules `event` at `tick`, clamped to the current time so the
    /// clock never runs backwards.
    pub fn schedule(&mut self, tick: Tick, event: E) -> u64 {
        let seq = self.next_seq;
        self.next_seq += 1;
        self.heap.push(Reverse(Entry {
            key: (tick.max(self.now), seq),
            event,
        }));
        seq
    }

    pub fn schedule_in(&mut self, delay: Tick, event: E) -> u64 {
        self.schedule(self.now + delay, event)
    }

    /// Pops the next event and advances the clock to it. `None` means the
    /// session is over.
    pub fn advance(&mut self) -> Option<Scheduled<E>> {
        let Reverse(entry) = self.heap.pop()?;
        self.now = entry.key.0;
        Some(Scheduled {
            tick: entry.key.0,
            seq: entry.key.1,
            event: entry.event,
        })
    }

    pub fn peek_tick(&self) -> Option<Tick> {
        self.heap.peek().map(|Reverse(e)| e.key.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_tick_keeps_insertion_order() {
        let mut s = Scheduler::new();
        s.schedule(5, "b");
        s.schedule(5, "c");
        s.schedule(1, "a");
        let order: Vec<_> = std::iter::from_fn(|| s.advance())
            .map(|e| e.event)
            .collect();
        assert_eq!(order, vec!["a", "b", "c"]);
    }

    #[test]
    fn empty_queue_ends_session() {
        let mut s: Scheduler<()> = Scheduler::new();
        assert!(s.advance().is_none());
    }

    #[test]
    fn past_events_are_clamped_to_now() {
        let mut s = Scheduler::new();
        s.schedule(10, 1);
        s.advance();
        s.schedule(3, 2);
        let e = s.advance().unwrap();
        assert_eq!((e.tick, e.event), (10, 2));
    }

    #[test]
    fn unit_conversions() {
        assert_eq!(ms_to_ticks(1050.0), 1_050_000);
        assert_eq!(ticks_to_ms(9_900_000), 9_900.0);
    }
}
