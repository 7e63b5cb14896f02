use std::cmp::Reverse;
use std::collections::{BinaryHeap, HashMap};
use std::hash::Hash;
use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Logical clock shared by the workers of one pass. Ticks are totally
/// ordered and consistent with the acquire/release edges of the locks, so
/// an interval recorded inside a critical section cannot overlap another
/// interval recorded under the same lock.
#[derive(Debug, Default)]
pub struct EventClock(AtomicU64);

impl EventClock {
    pub fn tick(&self) -> u64 {
        self.0.fetch_add(1, Ordering::SeqCst)
    }
}

/// One block processed by one worker, between logical ticks `start` and `end`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceEvent {
    pub worker: usize,
    pub row_band: usize,
    pub col_group: usize,
    pub start: u64,
    pub end: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ConflictTrace {
    pub events: Vec<TraceEvent>,
    /// Conflicts observed by the scheduler's own instrumentation.
    pub conflict_count: u64,
    /// Seconds workers spent waiting for a lock or a free block.
    pub wait_seconds: f64,
}

impl ConflictTrace {
    pub fn extend(&mut self, other: ConflictTrace) {
        // keep ticks globally increasing across passes
        let base = self.events.iter().map(|e| e.end + 1).max().unwrap_or(0);
        self.events.extend(other.events.into_iter().map(|mut e| {
            e.start += base;
            e.end += base;
            e
        }));
        self.conflict_count += other.conflict_count;
        self.wait_seconds += other.wait_seconds;
    }
}

/// Pairs of `(start, end)` intervals, keyed by `K`, that overlap in time.
fn overlapping_pairs<K: Eq + Hash>(events: &[TraceEvent], key: impl Fn(&TraceEvent) -> K) -> u64 {
    let mut by_key: HashMap<K, Vec<(u64, u64)>> = HashMap::new();
    for e in events {
        by_key.entry(key(e)).or_default().push((e.start, e.end));
    }
    let mut pairs = 0u64;
    for mut spans in by_key.into_values() {
        spans.sort_unstable();
        let mut active: BinaryHeap<Reverse<u64>> = BinaryHeap::new();
        for (start, end) in spans {
            while active.peek().is_some_and(|Reverse(e)| *e <= start) {
                active.pop();
            }
            pairs += active.len() as u64;
            active.push(Reverse(end));
        }
    }
    pairs
}

/// Count pairs of events that overlap in time and touch the same row band or
/// the same column group. Each pair is counted once.
pub fn detect_conflicts(trace: &ConflictTrace) -> Result<u64> {
    let mut last_end: HashMap<usize, u64> = HashMap::new();
    let mut per_worker: Vec<&TraceEvent> = trace.events.iter().collect();
    per_worker.sort_by_key(|e| (e.worker, e.start));
    for e in per_worker {
        if e.start > e.end {
            return Err(Error::usage(format!(
                "event of worker {} ends ({}) before it starts ({})",
                e.worker, e.end, e.start
            )));
        }
        if let Some(prev) = last_end.insert(e.worker, e.end) {
            if prev > e.start {
                return Err(Error::usage(format!("worker {} has overlapping events", e.worker)));
            }
        }
    }
    let cols = overlapping_pairs(&trace.events, |e| e.col_group);
    let rows = overlapping_pairs(&trace.events, |e| e.row_band);
    let both = overlapping_pairs(&trace.events, |e| (e.row_band, e.col_group));
    Ok(cols + rows - both)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ev(worker: usize, row: usize, col: usize, start: u64, end: u64) -> TraceEvent {
        TraceEvent {
            worker,
            row_band: row,
            col_group: col,
            start,
            end,
        }
    }

    fn count(events: Vec<TraceEvent>) -> Result<u64> {
        detect_conflicts(&ConflictTrace {
            events,
            ..Default::default()
        })
    }

    #[test]
    fn empty_trace_has_no_conflicts() {
        assert_eq!(count(vec![]).unwrap(), 0);
    }

    #[test]
    fn same_column_overlap_counts_once() {
        assert_eq!(count(vec![ev(0, 0, 3, 0, 5), ev(1, 1, 3, 2, 7)]).unwrap(), 1);
        // touching endpoints are not an overlap
        assert_eq!(count(vec![ev(0, 0, 3, 0, 5), ev(1, 1, 3, 5, 7)]).unwrap(), 0);
        // same block: shares row and column, still one pair
        assert_eq!(count(vec![ev(0, 1, 1, 0, 5), ev(1, 1, 1, 1, 2)]).unwrap(), 1);
        // disjoint rows and columns never conflict
        assert_eq!(count(vec![ev(0, 0, 0, 0, 5), ev(1, 1, 1, 0, 5)]).unwrap(), 0);
    }

    #[test]
    fn brute_force_agreement() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let events: Vec<_> = (0..40)
                .map(|w| {
                    let s = rng.random_range(0..100u64);
                    ev(
                        w,
                        rng.random_range(0..4),
                        rng.random_range(0..4),
                        s,
                        s + rng.random_range(0..20),
                    )
                })
                .collect();
            let mut brute = 0;
            for a in 0..events.len() {
                for b in a + 1..events.len() {
                    let (x, y) = (events[a], events[b]);
                    let overlap = x.start < y.end && y.start < x.end;
                    let shared = x.row_band == y.row_band || x.col_group == y.col_group;
                    brute += (overlap && shared) as u64;
                }
            }
            assert_eq!(count(events).unwrap(), brute);
        }
    }

    #[test]
    fn malformed_traces_are_rejected() {
        assert!(matches!(count(vec![ev(0, 0, 0, 5, 1)]), Err(Error::Usage(_))));
        assert!(matches!(
            count(vec![ev(0, 0, 0, 0, 5), ev(0, 1, 1, 3, 8)]),
            Err(Error::Usage(_))
        ));
    }
}
