use std::ops::Range;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};

use crate::model::{FeatureMatrix, Hyperparams, Sample, UpdateKernel};
use crate::train::{train, TrainOptions, TrainOutcome};
use crate::{RatingDataset, Result};

use super::{PassStats, Scheme};

/// Consecutive samples a worker takes per fetch.
pub const DEFAULT_BATCH_LEN: usize = 256;

/// Static assignment of length-`f` chunks of the sample array to `s` workers.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct WorkerPlan {
    pub workers: usize,
    pub batch_len: usize,
    /// `ranges[w]` lists the chunks of worker `w` in processing order.
    pub ranges: Vec<Vec<Range<usize>>>,
}

impl WorkerPlan {
    pub fn assigned(&self, worker: usize) -> usize {
        self.ranges[worker].iter().map(|r| r.len()).sum()
    }
}

/// Split `0..n` into `ceil(n/f)` chunks dealt round-robin to `s` workers.
pub fn plan_batch_hogwild(n: usize, s: usize, f: usize) -> WorkerPlan {
    assert!(s >= 1 && f >= 1, "plan needs s >= 1 and f >= 1");
    let mut ranges = vec![Vec::new(); s];
    for (c, start) in (0..n).step_by(f).enumerate() {
        ranges[c % s].push(start..(start + f).min(n));
    }
    WorkerPlan {
        workers: s,
        batch_len: f,
        ranges,
    }
}

/// Lock-free pass: each worker walks its chunks serially, sharing `p` and
/// `q` with the others without synchronization beyond element atomicity.
pub fn batch_hogwild_pass(
    work: &[Sample],
    p: &FeatureMatrix,
    q: &FeatureMatrix,
    rate: f32,
    hyper: &Hyperparams,
    workers: usize,
    batch_len: usize,
) -> PassStats {
    let plan = plan_batch_hogwild(work.len(), workers, batch_len);
    let updates = AtomicUsize::new(0);
    let abort = AtomicBool::new(false);

    let run_worker = |chunks: &[Range<usize>]| {
        let mut kernel = UpdateKernel::new(hyper);
        let mut done = 0usize;
        'outer: for chunk in chunks {
            for &s in &work[chunk.clone()] {
                if !kernel.apply(p, q, s, rate) {
                    abort.store(true, Ordering::Relaxed);
                    break 'outer;
                }
                done += 1;
            }
            if abort.load(Ordering::Relaxed) {
                break;
            }
        }
        updates.fetch_add(done, Ordering::Relaxed);
    };

    if workers == 1 {
        run_worker(&plan.ranges[0]);
    } else {
        std::thread::scope(|scope| {
            for chunks in plan.ranges.iter().filter(|c| !c.is_empty()) {
                scope.spawn(|| run_worker(chunks));
            }
        });
    }
    PassStats {
        updates: updates.into_inner(),
        trace: None,
        diverged: abort.into_inner(),
    }
}

/// Train with batch-Hogwild!: reshuffle every epoch, deal length-`f` chunks
/// to `s` lock-free workers.
#[allow(clippy::too_many_arguments)]
pub fn run_batch_hogwild(
    dataset: &RatingDataset,
    p: &FeatureMatrix,
    q: &FeatureMatrix,
    hyper: &Hyperparams,
    s: usize,
    f: usize,
    opts: &TrainOptions<'_>,
) -> Result<TrainOutcome> {
    train(
        dataset,
        p,
        q,
        hyper,
        &Scheme::BatchHogwild {
            workers: s,
            batch_len: f,
        },
        opts,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn covered(plan: &WorkerPlan) -> Vec<usize> {
        let mut all: Vec<usize> = plan.ranges.iter().flatten().flat_map(|r| r.clone()).collect();
        all.sort_unstable();
        all
    }

    #[test]
    fn exact_division() {
        let plan = plan_batch_hogwild(512, 2, 256);
        assert_eq!(plan.ranges, vec![vec![0..256], vec![256..512]]);
    }

    #[test]
    fn short_tail_goes_to_first_worker() {
        let plan = plan_batch_hogwild(100, 3, 256);
        assert_eq!(plan.ranges[0], vec![0..100]);
        assert!(plan.ranges[1].is_empty() && plan.ranges[2].is_empty());
    }

    #[test]
    fn round_robin_coverage() {
        let plan = plan_batch_hogwild(10_000, 4, 256);
        let chunks: usize = plan.ranges.iter().map(Vec::len).sum();
        assert_eq!(chunks, 40);
        assert_eq!(covered(&plan), (0..10_000).collect::<Vec<_>>());
        // worker w gets chunks w, w+4, ...
        assert_eq!(plan.ranges[1][1], 1280..1536);
        assert_eq!(plan.ranges[3].last().unwrap().clone(), 9984..10_000);
    }

    #[test]
    fn empty_plan() {
        let plan = plan_batch_hogwild(0, 3, 8);
        assert!(plan.ranges.iter().all(Vec::is_empty));
    }
}
