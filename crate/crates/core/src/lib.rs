//! Many-worker stochastic gradient descent for sparse matrix factorization.
//!
//! The crate is organised around the pieces of a training run:
//!
//! * [`model`] holds the factor matrices, the per-sample update rule, the
//!   learning-rate schedule and RMSE.
//! * [`dataset`] loads, generates, shuffles, splits and serializes ratings.
//! * [`grid`] partitions the rating matrix into an `i x j` block grid.
//! * [`schedule`] runs one worker group through an epoch with batch-Hogwild!,
//!   wavefront-update or a global-table baseline.
//! * [`pipeline`] spreads a block grid over several simulated devices and
//!   overlaps segment staging with compute.
//! * [`report`] collects per-epoch traces and writes CSV/JSON.
//! * [`train`] is the epoch driver tying the above together.

pub mod checkpoint;
pub mod cli;
pub mod dataset;
mod error;
pub mod f16;
pub mod grid;
pub mod model;
pub mod pipeline;
pub mod report;
pub mod rng;
pub mod schedule;
pub mod train;

pub use dataset::{RatingDataset, RatingScale, SplitPair};
pub use error::{Error, Result};
pub use grid::{BlockGrid, BlockId, Feasibility};
pub use model::{FeatureMatrix, Hyperparams, LearningRateSchedule, Precision, Sample};
pub use report::{EpochRecord, RunMetadata, TrainReport};
pub use schedule::{ConflictTrace, Scheme};
pub use train::{TrainOptions, TrainOutcome};
