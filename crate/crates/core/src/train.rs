//! Epoch driver shared by every scheme.

use std::time::Instant;

use crate::dataset::RatingScale;
use crate::model::{check_bounds, init_features, rmse, FeatureMatrix, Hyperparams, Precision, Sample};
use crate::report::{record_epoch, EpochRecord, RunMetadata, TrainReport};
use crate::rng::{derive_seed, epoch_seed};
use crate::schedule::{run_pass, ConflictTrace, Scheme};
use crate::{Error, RatingDataset, Result};

#[derive(Clone, Copy, Debug)]
pub struct TrainOptions<'a> {
    pub epochs: usize,
    pub seed: u64,
    /// Held-out samples in the dataset's stored domain; may be empty.
    pub test: &'a [Sample],
    /// Stop after the first epoch whose test RMSE is at or below this.
    pub target_rmse: Option<f64>,
}

impl<'a> TrainOptions<'a> {
    pub fn new(epochs: usize, seed: u64) -> Self {
        TrainOptions {
            epochs,
            seed,
            test: &[],
            target_rmse: None,
        }
    }

    pub fn with_test(mut self, test: &'a [Sample]) -> Self {
        self.test = test;
        self
    }

    pub fn with_target(mut self, target: Option<f64>) -> Self {
        self.target_rmse = target;
        self
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub report: TrainReport,
    /// Block-level events for the lock-based schemes.
    pub trace: Option<ConflictTrace>,
}

/// RMSE over stored-domain `samples`, reported in the raw rating domain.
pub fn test_rmse(samples: &[Sample], p: &FeatureMatrix, q: &FeatureMatrix, scale: RatingScale) -> Result<f64> {
    Ok(rmse(samples, p, q)? / scale.factor as f64)
}

pub(crate) fn metadata(
    scheme: &Scheme,
    hyper: &Hyperparams,
    p: &FeatureMatrix,
    seed: u64,
    samples: usize,
) -> RunMetadata {
    let mut meta = RunMetadata {
        scheme: scheme.name().to_string(),
        workers: scheme.workers(),
        k: hyper.k,
        precision: p.precision().to_string(),
        seed,
        samples,
        ..Default::default()
    };
    match *scheme {
        Scheme::BatchHogwild { batch_len, .. } => meta.batch_len = Some(batch_len),
        Scheme::Wavefront { columns, .. } => meta.columns = Some(columns),
        Scheme::GlobalTable { rows, cols, .. } => meta.grid = Some((rows, cols)),
        Scheme::Serial => {}
    }
    meta
}

pub(crate) fn check_model(
    dataset: &RatingDataset,
    p: &FeatureMatrix,
    q: &FeatureMatrix,
    hyper: &Hyperparams,
) -> Result<()> {
    hyper.validate()?;
    if p.rows() != dataset.m || q.rows() != dataset.n {
        return Err(Error::usage(format!(
            "model is {}x{} but dataset is {}x{}",
            p.rows(),
            q.rows(),
            dataset.m,
            dataset.n
        )));
    }
    if p.k() != hyper.k || q.k() != hyper.k {
        return Err(Error::usage("factor matrices do not have rank k"));
    }
    if p.precision() != q.precision() {
        return Err(Error::usage("P and Q must share a precision"));
    }
    Ok(())
}

/// Run `opts.epochs` epochs of `scheme`. Each epoch starts from the
/// dataset's sample order, shuffled with [`epoch_seed`], trains at
/// `lr_at_epoch(t)` and then evaluates the test RMSE.
pub fn train(
    dataset: &RatingDataset,
    p: &FeatureMatrix,
    q: &FeatureMatrix,
    hyper: &Hyperparams,
    scheme: &Scheme,
    opts: &TrainOptions<'_>,
) -> Result<TrainOutcome> {
    check_model(dataset, p, q, hyper)?;
    scheme.validate(dataset.m, dataset.n)?;
    check_bounds(opts.test, dataset.m, dataset.n)?;

    let schedule = hyper.schedule();
    let mut report = TrainReport::new(metadata(scheme, hyper, p, opts.seed, dataset.len()));
    let mut trace: Option<ConflictTrace> = None;
    let mut work = dataset.samples.clone();

    for t in 0..opts.epochs {
        work.copy_from_slice(&dataset.samples);
        let lr = schedule.rate(t);
        let started = Instant::now();
        let stats = run_pass(scheme, &mut work, p, q, lr as f32, hyper, epoch_seed(opts.seed, t));
        let epoch_seconds = started.elapsed().as_secs_f64();

        if let Some(tr) = stats.trace {
            report.absorb_trace(&tr);
            trace.get_or_insert_with(ConflictTrace::default).extend(tr);
        }
        if stats.diverged {
            return Err(Error::Diverged {
                epoch: t,
                report: Some(Box::new(report)),
            });
        }
        let test_rmse = if opts.test.is_empty() {
            None
        } else {
            Some(test_rmse(opts.test, p, q, dataset.scale)?)
        };
        record_epoch(
            &mut report,
            EpochRecord {
                epoch: t,
                lr,
                epoch_seconds,
                test_rmse,
                updates: stats.updates as u64,
            },
        )?;
        log::debug!("epoch {t}: lr={lr:.6} rmse={test_rmse:?} {epoch_seconds:.3}s");
        if let (Some(target), Some(r)) = (opts.target_rmse, test_rmse) {
            if r <= target {
                break;
            }
        }
    }
    Ok(TrainOutcome { report, trace })
}

/// Seeded initial factors for an `m x n` problem, uniform in `[0, 1/sqrt(k))`.
pub fn init_model(m: usize, n: usize, k: usize, precision: Precision, seed: u64) -> (FeatureMatrix, FeatureMatrix) {
    (
        init_features(m, k, derive_seed(seed, 0, 0x1_0001), None, precision),
        init_features(n, k, derive_seed(seed, 0, 0x1_0002), None, precision),
    )
}
