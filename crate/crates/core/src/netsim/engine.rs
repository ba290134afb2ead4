use std::cmp::Ordering;
use std::collections::BinaryHeap;

use super::SimError;

/// A queued event. Events dequeue in `(time, sequence)` order.
#[derive(Debug, Clone)]
pub struct SimEvent<T> {
    pub time: f64,
    pub sequence: u64,
    pub kind: T,
}

impl<T> PartialEq for SimEvent<T> {
    fn eq(&self, other: &Self) -> bool {
        self.sequence == other.sequence
    }
}

impl<T> Eq for SimEvent<T> {}

impl<T> PartialOrd for SimEvent<T> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<T> Ord for SimEvent<T> {
    // reversed: BinaryHeap is a max-heap
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .time
            .total_cmp(&self.time)
            .then_with(|| other.sequence.cmp(&self.sequence))
    }
}

#[derive(Debug)]
pub struct Scheduler<T> {
    now: f64,
    next_sequence: u64,
    heap: BinaryHeap<SimEvent<T>>,
    executed: u64,
}

impl<T> Default for Scheduler<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T> Scheduler<T> {
    pub fn new() -> Self {
        Self { now: 0.0, next_sequence: 0, heap: BinaryHeap::new(), executed: 0 }
    }

    pub fn now(&self) -> f64 {
        self.now
    }

    pub fn pending(&self) -> usize {
        self.heap.len()
    }

    pub fn executed(&self) -> u64 {
        self.executed
    }

    pub fn schedule(&mut self, time: f64, kind: T) -> Result<u64, SimError> {
        if !(time >= self.now) {
            return Err(SimError::PastEvent { time, now: self.now });
        }
        let sequence = self.next_sequence;
        self.next_sequence += 1;
        self.heap.push(SimEvent { time, sequence, kind });
        Ok(sequence)
    }

    pub fn schedule_in(&mut self, delay: f64, kind: T) -> Result<u64, SimError> {
        self.schedule(self.now + delay, kind)
    }

    /// Pops the next event due at or before `t_end`, advancing the clock to
    /// it. When nothing is due, the clock moves to `t_end` and `None` is
    /// returned.
    pub fn pop_until(&mut self, t_end: f64) -> Option<SimEvent<T>> {
        match self.heap.peek() {
            Some(ev) if ev.time <= t_end => {
                let ev = self.heap.pop()?;
                self.now = ev.time;
                self.executed += 1;
                Some(ev)
            }
            _ => {
                if t_end > self.now {
                    self.now = t_end;
                }
                None
            }
        }
    }

    /// Runs every event due up to `t_end` through `handler`, which may
    /// schedule further events. Returns the number of events executed.
    pub fn run_until<F>(&mut self, t_end: f64, mut handler: F) -> Result<u64, SimError>
    where
        F: FnMut(&mut Self, SimEvent<T>) -> Result<(), SimError>,
    {
        if t_end < self.now {
            return Err(SimError::PastEvent { time: t_end, now: self.now });
        }
        let mut count = 0;
        while let Some(ev) = self.pop_until(t_end) {
            handler(self, ev)?;
            count += 1;
        }
        Ok(count)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_run_advances_clock() {
        let mut s: Scheduler<()> = Scheduler::new();
        assert_eq!(s.run_until(10.0, |_, _| Ok(())).unwrap(), 0);
        assert_eq!(s.now(), 10.0);
    }

    #[test]
    fn equal_times_keep_insertion_order() {
        let mut s = Scheduler::new();
        s.schedule(1.0, "first").unwrap();
        s.schedule(1.0, "second").unwrap();
        s.schedule(0.5, "early").unwrap();
        let mut seen = Vec::new();
        s.run_until(2.0, |_, ev| {
            seen.push(ev.kind);
            Ok(())
        })
        .unwrap();
        assert_eq!(seen, vec!["early", "first", "second"]);
    }

    #[test]
    fn scheduling_in_the_past_fails() {
        let mut s = Scheduler::new();
        s.schedule(5.0, ()).unwrap();
        s.run_until(5.0, |_, _| Ok(())).unwrap();
        assert!(matches!(s.schedule(4.0, ()), Err(SimError::PastEvent { .. })));
        assert!(s.run_until(1.0, |_, _| Ok(())).is_err());
    }

    #[test]
    fn handler_can_schedule_and_clock_never_regresses() {
        let mut s = Scheduler::new();
        s.schedule(0.0, 0u32).unwrap();
        let mut last = 0.0;
        let n = s
            .run_until(100.0, |q, ev| {
                assert!(q.now() >= last);
                last = q.now();
                if ev.kind < 50 {
                    q.schedule_in(0.7, ev.kind + 1)?;
                }
                Ok(())
            })
            .unwrap();
        assert_eq!(n, 51);
        assert_eq!(s.now(), 100.0);
    }

    #[test]
    fn events_after_horizon_stay_queued() {
        let mut s = Scheduler::new();
        s.schedule(3.0, ()).unwrap();
        assert_eq!(s.run_until(2.0, |_, _| Ok(())).unwrap(), 0);
        assert_eq!(s.pending(), 1);
        assert_eq!(s.run_until(3.0, |_, _| Ok(())).unwrap(), 1);
    }
}
