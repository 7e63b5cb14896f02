use std::sync::atomic::{AtomicBool, AtomicU64, AtomicUsize, Ordering};
use std::time::Instant;

use rand::seq::SliceRandom;

use crate::grid::build_block_grid;
use crate::model::{serial_pass, FeatureMatrix, Hyperparams, Sample};
use crate::rng::{derive_seed, rng_from};
use crate::train::{train, TrainOptions, TrainOutcome};
use crate::{Error, RatingDataset, Result};

use super::{ConflictTrace, EventClock, PassStats, Scheme, TraceEvent};

/// Per-worker column visiting orders. Worker `w` owns row band `w`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct WavefrontPlan {
    pub workers: usize,
    pub columns: usize,
    pub sequences: Vec<Vec<usize>>,
}

pub fn make_column_permutations(s: usize, c: usize, seed: u64) -> Result<WavefrontPlan> {
    if s == 0 {
        return Err(Error::usage("wavefront needs at least one worker"));
    }
    if s > c {
        return Err(Error::usage(format!(
            "wavefront needs workers <= columns, got s={s} c={c}"
        )));
    }
    let sequences = (0..s)
        .map(|w| {
            let mut seq: Vec<usize> = (0..c).collect();
            seq.shuffle(&mut rng_from(derive_seed(seed, w, 0x5eed)));
            seq
        })
        .collect();
    Ok(WavefrontPlan {
        workers: s,
        columns: c,
        sequences,
    })
}

const FREE: usize = usize::MAX;

/// One status word per column group: free, or the id of the holding worker.
#[derive(Debug)]
pub struct ColumnLockArray {
    status: Vec<AtomicUsize>,
    occupancy: Vec<AtomicUsize>,
    conflicts: AtomicU64,
}

impl ColumnLockArray {
    pub fn new(columns: usize) -> Self {
        ColumnLockArray {
            status: (0..columns).map(|_| AtomicUsize::new(FREE)).collect(),
            occupancy: (0..columns).map(|_| AtomicUsize::new(0)).collect(),
            conflicts: AtomicU64::new(0),
        }
    }

    pub fn holder(&self, column: usize) -> Option<usize> {
        match self.status[column].load(Ordering::Acquire) {
            FREE => None,
            w => Some(w),
        }
    }

    pub fn try_acquire(&self, column: usize, worker: usize) -> bool {
        let won = self.status[column]
            .compare_exchange(FREE, worker, Ordering::Acquire, Ordering::Relaxed)
            .is_ok();
        if won && self.occupancy[column].fetch_add(1, Ordering::SeqCst) != 0 {
            self.conflicts.fetch_add(1, Ordering::Relaxed);
        }
        won
    }

    /// Spin until `column` is free, then take it.
    pub fn acquire(&self, column: usize, worker: usize) {
        let mut spins = 0u32;
        while !self.try_acquire(column, worker) {
            spins += 1;
            if spins < 64 {
                std::hint::spin_loop();
            } else {
                std::thread::yield_now();
            }
        }
    }

    pub fn release(&self, column: usize, worker: usize) {
        self.occupancy[column].fetch_sub(1, Ordering::SeqCst);
        let prev = self.status[column].swap(FREE, Ordering::Release);
        assert_eq!(prev, worker, "column {column} released by a non-holder");
    }

    /// Same-column overlaps seen by the lock array itself.
    pub fn conflicts(&self) -> u64 {
        self.conflicts.load(Ordering::Relaxed)
    }
}

/// Wavefront pass over an `s x c` grid of `work`. Worker `w` walks row band
/// `w` in its permuted column order, holding the column's flag while it
/// updates the block.
#[allow(clippy::too_many_arguments)]
pub fn wavefront_pass(
    work: &[Sample],
    p: &FeatureMatrix,
    q: &FeatureMatrix,
    rate: f32,
    hyper: &Hyperparams,
    workers: usize,
    columns: usize,
    seed: u64,
) -> PassStats {
    let (grid, sorted) =
        build_block_grid(work, p.rows(), q.rows(), workers, columns).expect("wavefront grid validated by caller");
    let plan = make_column_permutations(workers, columns, seed).expect("validated by caller");
    let locks = ColumnLockArray::new(columns);
    let clock = EventClock::default();
    let updates = AtomicUsize::new(0);
    let abort = AtomicBool::new(false);

    let run_worker = |w: usize| -> (Vec<TraceEvent>, f64) {
        let mut events = Vec::with_capacity(columns);
        let mut waited = 0.0;
        let mut done = 0;
        for &g in &plan.sequences[w] {
            if abort.load(Ordering::Relaxed) {
                break;
            }
            let t0 = Instant::now();
            locks.acquire(g, w);
            waited += t0.elapsed().as_secs_f64();
            let start = clock.tick();
            let block = &sorted[grid.range(crate::grid::BlockId::new(w, g))];
            match serial_pass(block, p, q, rate, hyper) {
                Some(n) => done += n,
                None => abort.store(true, Ordering::Relaxed),
            }
            let end = clock.tick();
            locks.release(g, w);
            events.push(TraceEvent {
                worker: w,
                row_band: w,
                col_group: g,
                start,
                end,
            });
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
        conflict_count: locks.conflicts(),
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

/// Train with wavefront-update over an `s x c` grid.
#[allow(clippy::too_many_arguments)]
pub fn run_wavefront(
    dataset: &RatingDataset,
    p: &FeatureMatrix,
    q: &FeatureMatrix,
    hyper: &Hyperparams,
    s: usize,
    c: usize,
    opts: &TrainOptions<'_>,
) -> Result<TrainOutcome> {
    train(
        dataset,
        p,
        q,
        hyper,
        &Scheme::Wavefront { workers: s, columns: c },
        opts,
    )
}
