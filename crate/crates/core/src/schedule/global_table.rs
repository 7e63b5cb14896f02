use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::{Condvar, Mutex};
use std::time::Instant;

use crate::grid::{build_block_grid, BlockGrid, BlockId};
use crate::model::{serial_pass, FeatureMatrix, Hyperparams, Sample};
use crate::train::{train, TrainOptions, TrainOutcome};
use crate::{RatingDataset, Result};

use super::{ConflictTrace, EventClock, PassStats, Scheme, TraceEvent};

/// Shared scheduling table: busy rows, busy columns and per-block visit
/// counts, all behind one lock.
struct Table {
    row_busy: Vec<bool>,
    col_busy: Vec<bool>,
    visits: Vec<u32>,
    claimed: Vec<bool>,
    unclaimed: usize,
    /// Instrumentation: blocks currently held.
    held: Vec<BlockId>,
    conflicts: u64,
}

impl Table {
    fn new(grid: &BlockGrid) -> Self {
        Table {
            row_busy: vec![false; grid.i()],
            col_busy: vec![false; grid.j()],
            visits: vec![0; grid.num_blocks()],
            claimed: vec![false; grid.num_blocks()],
            unclaimed: grid.num_blocks(),
            held: Vec::new(),
            conflicts: 0,
        }
    }

    /// Among unclaimed blocks with a free row and column, the one with the
    /// fewest visits, lowest index first.
    fn pick(&mut self, grid: &BlockGrid) -> Option<BlockId> {
        let idx = (0..grid.num_blocks())
            .filter(|&b| !self.claimed[b])
            .filter(|&b| {
                let id = grid.block(b);
                !self.row_busy[id.row] && !self.col_busy[id.col]
            })
            .min_by_key(|&b| (self.visits[b], b))?;
        let id = grid.block(idx);
        if self.held.iter().any(|h| h.row == id.row || h.col == id.col) {
            self.conflicts += 1;
        }
        self.claimed[idx] = true;
        self.unclaimed -= 1;
        self.row_busy[id.row] = true;
        self.col_busy[id.col] = true;
        self.held.push(id);
        Some(id)
    }

    fn finish(&mut self, grid: &BlockGrid, id: BlockId) {
        self.row_busy[id.row] = false;
        self.col_busy[id.col] = false;
        self.visits[grid.index(id)] += 1;
        self.held.retain(|h| *h != id);
    }
}

/// Baseline pass in the style of a global scheduling table: an idle worker
/// locks the table, takes a free independent block, releases the lock,
/// updates the block, then locks again to return it.
pub fn global_table_pass(
    work: &[Sample],
    p: &FeatureMatrix,
    q: &FeatureMatrix,
    rate: f32,
    hyper: &Hyperparams,
    workers: usize,
    (rows, cols): (usize, usize),
) -> PassStats {
    let (grid, sorted) = build_block_grid(work, p.rows(), q.rows(), rows, cols).expect("grid validated by caller");
    let table = Mutex::new(Table::new(&grid));
    let freed = Condvar::new();
    let clock = EventClock::default();
    let updates = AtomicUsize::new(0);
    let abort = AtomicBool::new(false);

    let run_worker = |w: usize| -> (Vec<TraceEvent>, f64) {
        let mut events = Vec::new();
        let mut waited = 0.0;
        let mut done = 0;
        loop {
            let t0 = Instant::now();
            let picked = {
                let mut t = table.lock().unwrap();
                loop {
                    if t.unclaimed == 0 || abort.load(Ordering::Relaxed) {
                        break None;
                    }
                    if let Some(id) = t.pick(&grid) {
                        break Some(id);
                    }
                    t = freed.wait(t).unwrap();
                }
            };
            waited += t0.elapsed().as_secs_f64();
            let Some(id) = picked else { break };

            let start = clock.tick();
            match serial_pass(&sorted[grid.range(id)], p, q, rate, hyper) {
                Some(n) => done += n,
                None => abort.store(true, Ordering::Relaxed),
            }
            let end = clock.tick();
            events.push(TraceEvent {
                worker: w,
                row_band: id.row,
                col_group: id.col,
                start,
                end,
            });
            table.lock().unwrap().finish(&grid, id);
            freed.notify_all();
        }
        updates.fetch_add(done, Ordering::Relaxed);
        (events, waited)
    };

    let results: Vec<(Vec<TraceEvent>, f64)> = if workers == 1 {
        vec![run_worker(0)]
    } else {
        std::thread::scope(|scope| {
            let handles: Vec<_> = (0..workers)
                .map(|w| {
                    let run = &run_worker;
                    scope.spawn(move || run(w))
                })
                .collect();
            handles.into_iter().map(|h| h.join().unwrap()).collect()
        })
    };

    let mut trace = ConflictTrace {
        conflict_count: table.into_inner().unwrap().conflicts,
        ..Default::default()
    };
    for (events, waited) in results {
        trace.events.extend(events);
        trace.wait_seconds += waited;
    }
    trace.events.sort_by_key(|e| e.start);
    PassStats {
        updates: updates.into_inner(),
        trace: Some(trace),
        diverged: abort.into_inner(),
    }
}

/// Train with the global-table baseline on a `rows x cols` grid.
#[allow(clippy::too_many_arguments)]
pub fn run_global_table(
    dataset: &RatingDataset,
    p: &FeatureMatrix,
    q: &FeatureMatrix,
    hyper: &Hyperparams,
    s: usize,
    grid: (usize, usize),
    opts: &TrainOptions<'_>,
) -> Result<TrainOutcome> {
    train(
        dataset,
        p,
        q,
        hyper,
        &Scheme::GlobalTable {
            workers: s,
            rows: grid.0,
            cols: grid.1,
        },
        opts,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pick_prefers_lowest_index_and_respects_exclusion() {
        let grid = BlockGrid::shape(4, 4, 2, 2).unwrap();
        let mut t = Table::new(&grid);
        assert_eq!(t.pick(&grid), Some(BlockId::new(0, 0)));
        assert_eq!(t.pick(&grid), Some(BlockId::new(1, 1)));
        assert_eq!(t.pick(&grid), None);
        t.finish(&grid, BlockId::new(0, 0));
        assert_eq!(t.pick(&grid), None, "row 1 and column 1 still busy");
        t.finish(&grid, BlockId::new(1, 1));
        assert_eq!(t.pick(&grid), Some(BlockId::new(0, 1)));
        assert_eq!(t.pick(&grid), Some(BlockId::new(1, 0)));
        assert_eq!(t.unclaimed, 0);
        assert_eq!(t.conflicts, 0);
    }
}
