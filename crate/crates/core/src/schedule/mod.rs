//! Work distribution for one worker group.
//!
//! Every scheme exposes a *pass*: apply exactly one update per sample of a
//! sample slice at a fixed learning rate. Epoch drivers ([`crate::train`]
//! and [`crate::pipeline`]) call passes and handle the schedule, RMSE and
//! reporting.

mod global_table;
mod hogwild;
mod trace;
mod wavefront;

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::model::{FeatureMatrix, Hyperparams, Sample};

pub use global_table::{global_table_pass, run_global_table};
pub use hogwild::{batch_hogwild_pass, plan_batch_hogwild, run_batch_hogwild, WorkerPlan, DEFAULT_BATCH_LEN};
pub use trace::{detect_conflicts, ConflictTrace, EventClock, TraceEvent};
pub use wavefront::{make_column_permutations, run_wavefront, wavefront_pass, ColumnLockArray, WavefrontPlan};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "kebab-case")]
pub enum Scheme {
    Serial,
    BatchHogwild { workers: usize, batch_len: usize },
    Wavefront { workers: usize, columns: usize },
    GlobalTable { workers: usize, rows: usize, cols: usize },
}

impl Scheme {
    pub fn workers(&self) -> usize {
        match *self {
            Scheme::Serial => 1,
            Scheme::BatchHogwild { workers, .. }
            | Scheme::Wavefront { workers, .. }
            | Scheme::GlobalTable { workers, .. } => workers,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Scheme::Serial => "serial",
            Scheme::BatchHogwild { .. } => "hogwild",
            Scheme::Wavefront { .. } => "wavefront",
            Scheme::GlobalTable { .. } => "global-table",
        }
    }

    /// Check scheme parameters against an `m x n` problem.
    pub fn validate(&self, m: usize, n: usize) -> crate::Result<()> {
        use crate::Error;
        match *self {
            Scheme::Serial => Ok(()),
            Scheme::BatchHogwild { workers, batch_len } => {
                if workers == 0 || batch_len == 0 {
                    return Err(Error::usage("hogwild needs at least one worker and f >= 1"));
                }
                Ok(())
            }
            Scheme::Wavefront { workers, columns } => {
                if workers == 0 {
                    return Err(Error::usage("wavefront needs at least one worker"));
                }
                if workers > columns {
                    return Err(Error::usage(format!(
                        "wavefront needs workers <= columns, got s={workers} c={columns}"
                    )));
                }
                if workers > m || columns > n {
                    return Err(Error::usage(format!(
                        "{workers}x{columns} wavefront grid does not fit a {m}x{n} matrix"
                    )));
                }
                Ok(())
            }
            Scheme::GlobalTable { workers, rows, cols } => {
                if workers == 0 {
                    return Err(Error::usage("global table needs at least one worker"));
                }
                if rows < workers || cols < workers {
                    return Err(Error::usage(format!(
                        "global table needs a grid of at least {workers}x{workers}, got {rows}x{cols}"
                    )));
                }
                if rows > m || cols > n {
                    return Err(Error::usage(format!(
                        "{rows}x{cols} grid does not fit a {m}x{n} matrix"
                    )));
                }
                Ok(())
            }
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Result of one pass.
#[derive(Clone, Debug, Default)]
pub struct PassStats {
    pub updates: usize,
    pub trace: Option<ConflictTrace>,
    /// Set when some worker wrote a non-finite value.
    pub diverged: bool,
}

/// Shuffle `work` with `seed`, then run one pass of `scheme` over it.
///
/// `work` is indexed into `p` (rows) and `q` (columns).
pub fn run_pass(
    scheme: &Scheme,
    work: &mut [Sample],
    p: &FeatureMatrix,
    q: &FeatureMatrix,
    rate: f32,
    hyper: &Hyperparams,
    seed: u64,
) -> PassStats {
    crate::dataset::shuffle_samples(work, seed);
    match *scheme {
        Scheme::Serial => match crate::model::serial_pass(work, p, q, rate, hyper) {
            Some(updates) => PassStats {
                updates,
                ..Default::default()
            },
            None => PassStats {
                diverged: true,
                ..Default::default()
            },
        },
        Scheme::BatchHogwild { workers, batch_len } => batch_hogwild_pass(work, p, q, rate, hyper, workers, batch_len),
        Scheme::Wavefront { workers, columns } => wavefront_pass(work, p, q, rate, hyper, workers, columns, seed),
        Scheme::GlobalTable { workers, rows, cols } => {
            global_table_pass(work, p, q, rate, hyper, workers, (rows, cols))
        }
    }
}
