//! Block-partitioned training across several simulated devices.
//!
//! The rating matrix is cut into an `i x j` grid. Every epoch a controller
//! draws a [`RoundSchedule`]: in each round every device receives up to
//! `lookahead` blocks, and blocks on different devices share no row band or
//! column group. A device works through its queue as a three-stage
//! pipeline; while block `b` computes, block `b + 1` is staged in and the
//! segments of block `b - 1` are staged out to the master matrices.
//!
//! A device keeps a segment resident while a queued neighbour still needs
//! it, so consecutive dependent blocks on one device see each other's
//! updates without a round trip through the master copy.
//!
//! Transfers are modeled by a [`DelayModel`]. Stage durations are also fed
//! to a virtual clock so overlap can be checked without relying on host
//! timing.

use std::collections::HashMap;
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::seq::IndexedRandom;
use serde::{Deserialize, Serialize};

use crate::grid::{build_block_grid, independent, BlockGrid, BlockId};
use crate::model::{FeatureMatrix, Hyperparams, Sample};
use crate::report::{record_epoch, EpochRecord, TrainReport};
use crate::rng::{derive_seed, epoch_seed, rng_from};
use crate::schedule::{run_pass, Scheme};
use crate::train::{check_model, metadata, test_rmse, TrainOptions};
use crate::{Error, RatingDataset, Result};

/// Transfer cost: `latency + bytes / bytes_per_sec` per staged copy.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DelayModel {
    pub bytes_per_sec: f64,
    pub latency_seconds: f64,
}

impl Default for DelayModel {
    fn default() -> Self {
        DelayModel::NONE
    }
}

impl DelayModel {
    pub const NONE: DelayModel = DelayModel {
        bytes_per_sec: f64::INFINITY,
        latency_seconds: 0.0,
    };

    pub fn fixed(seconds: f64) -> Self {
        DelayModel {
            bytes_per_sec: f64::INFINITY,
            latency_seconds: seconds,
        }
    }

    pub fn transfer_seconds(&self, bytes: usize) -> f64 {
        if bytes == 0 {
            return 0.0;
        }
        self.latency_seconds + bytes as f64 / self.bytes_per_sec
    }

    pub fn is_free(&self) -> bool {
        self.latency_seconds == 0.0 && self.bytes_per_sec.is_infinite()
    }
}

/// A simulated device: a worker group with bounded fast memory behind a
/// modeled link.
#[derive(Clone, Debug, PartialEq)]
pub struct DeviceWorker {
    pub id: usize,
    /// Most samples that may be resident at once (current plus staged block).
    pub capacity: usize,
    pub delay: DelayModel,
}

/// Per-epoch assignment of blocks to devices.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoundSchedule {
    pub devices: usize,
    pub lookahead: usize,
    /// `rounds[r][d]` is the queue of device `d` in round `r`.
    pub rounds: Vec<Vec<Vec<BlockId>>>,
}

impl RoundSchedule {
    /// Blocks in dispatch order: round by round, then device by device.
    pub fn order(&self) -> Vec<BlockId> {
        self.rounds.iter().flatten().flatten().copied().collect()
    }

    /// True when every round's cross-device assignments are independent.
    pub fn cross_device_independent(&self) -> bool {
        self.rounds.iter().all(|round| {
            round.iter().enumerate().all(|(d, mine)| {
                round
                    .iter()
                    .skip(d + 1)
                    .all(|other| mine.iter().all(|a| other.iter().all(|b| independent(*a, *b))))
            })
        })
    }
}

const SCHEDULE_ATTEMPTS: usize = 64;

/// Most blocks a device may take per round.
pub fn max_lookahead(grid: &BlockGrid, devices: usize) -> usize {
    if devices <= 1 {
        grid.num_blocks()
    } else {
        grid.j().div_ceil(devices)
    }
}

/// Draw a round schedule covering every block of `grid` exactly once.
///
/// Slots are filled round-robin over devices; each slot takes a block
/// uniformly among those still unscheduled and independent of the other
/// devices' picks in the round. A few randomized attempts are made and the
/// one with the fewest rounds kept.
pub fn select_schedule(grid: &BlockGrid, devices: usize, lookahead: usize, seed: u64) -> Result<RoundSchedule> {
    if devices == 0 || lookahead == 0 {
        return Err(Error::usage("devices and lookahead must be at least 1"));
    }
    if devices > 1 && (grid.i() < devices || grid.j() < devices) {
        return Err(Error::usage(format!(
            "{} devices need at least a {devices}x{devices} grid, got {}x{}",
            devices,
            grid.i(),
            grid.j()
        )));
    }
    let bound = max_lookahead(grid, devices);
    if lookahead > bound {
        return Err(Error::usage(format!(
            "lookahead {lookahead} exceeds {bound} blocks per device for a {}x{} grid on {devices} devices",
            grid.i(),
            grid.j()
        )));
    }
    let ideal = grid.num_blocks().div_ceil(devices * lookahead);
    let mut rng = rng_from(seed);
    let mut best: Option<RoundSchedule> = None;
    for _ in 0..SCHEDULE_ATTEMPTS {
        let cand = draw_schedule(grid, devices, lookahead, &mut rng);
        if best.as_ref().is_none_or(|b| cand.rounds.len() < b.rounds.len()) {
            best = Some(cand);
        }
        if best.as_ref().unwrap().rounds.len() == ideal {
            break;
        }
    }
    Ok(best.expect("at least one attempt"))
}

/// Blocks device `d` may take next: unscheduled and independent of what
/// the other devices already hold this round.
fn eligible_for(round: &[Vec<BlockId>], d: usize, remaining: &[BlockId]) -> Vec<BlockId> {
    remaining
        .iter()
        .copied()
        .filter(|b| {
            round
                .iter()
                .enumerate()
                .filter(|(o, _)| *o != d)
                .all(|(_, q)| q.iter().all(|x| independent(*x, *b)))
        })
        .collect()
}

fn draw_schedule(grid: &BlockGrid, devices: usize, lookahead: usize, rng: &mut crate::rng::Rng) -> RoundSchedule {
    let mut remaining: Vec<BlockId> = grid.blocks().collect();
    let mut rounds = Vec::new();
    while !remaining.is_empty() {
        let mut round: Vec<Vec<BlockId>> = vec![Vec::new(); devices];
        for _slot in 0..lookahead {
            for d in 0..devices {
                if let Some(&pick) = eligible_for(&round, d, &remaining).choose(rng) {
                    remaining.retain(|b| *b != pick);
                    round[d].push(pick);
                }
            }
        }
        rounds.push(round);
    }
    RoundSchedule {
        devices,
        lookahead,
        rounds,
    }
}

/// Largest grid [`enumerate_schedules`] will walk.
pub const ENUMERATION_LIMIT: usize = 9;

/// Every schedule the slot-filling process behind [`select_schedule`] can
/// produce, found by trying each eligible block at each slot.
pub fn enumerate_schedules(grid: &BlockGrid, devices: usize, lookahead: usize) -> Result<Vec<RoundSchedule>> {
    // reuse the argument checks
    select_schedule(grid, devices, lookahead, 0)?;
    if grid.num_blocks() > ENUMERATION_LIMIT {
        return Err(Error::usage(format!(
            "enumeration is limited to {ENUMERATION_LIMIT} blocks, grid has {}",
            grid.num_blocks()
        )));
    }
    struct Walk {
        devices: usize,
        lookahead: usize,
        out: Vec<RoundSchedule>,
    }
    fn fill(w: &mut Walk, rounds: &mut Vec<Vec<Vec<BlockId>>>, remaining: &mut Vec<BlockId>, slot: usize) {
        if remaining.is_empty() {
            w.out.push(RoundSchedule {
                devices: w.devices,
                lookahead: w.lookahead,
                rounds: rounds.clone(),
            });
            return;
        }
        let per_round = w.devices * w.lookahead;
        if slot == per_round {
            rounds.push(vec![Vec::new(); w.devices]);
            fill(w, rounds, remaining, 0);
            rounds.pop();
            return;
        }
        let d = slot % w.devices;
        let round = rounds.last().unwrap();
        let choices = eligible_for(round, d, remaining);
        if choices.is_empty() {
            fill(w, rounds, remaining, slot + 1);
            return;
        }
        for b in choices {
            let at = remaining.iter().position(|x| *x == b).unwrap();
            remaining.remove(at);
            rounds.last_mut().unwrap()[d].push(b);
            fill(w, rounds, remaining, slot + 1);
            rounds.last_mut().unwrap()[d].pop();
            remaining.insert(at, b);
        }
    }
    let mut w = Walk {
        devices,
        lookahead,
        out: Vec::new(),
    };
    let mut rounds = vec![vec![Vec::new(); devices]];
    fill(&mut w, &mut rounds, &mut grid.blocks().collect(), 0);
    Ok(w.out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    StageIn,
    Compute,
    StageOut,
}

/// One pipeline stage on one device. `virtual_*` come from the modeled
/// clock; `wall_*` are host seconds since the epoch started.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageEvent {
    pub epoch: usize,
    pub round: usize,
    pub device: usize,
    pub block_row: usize,
    pub block_col: usize,
    pub stage: Stage,
    pub bytes: usize,
    pub virtual_start: f64,
    pub virtual_end: f64,
    pub wall_start: f64,
    pub wall_end: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PipelineConfig {
    pub grid: (usize, usize),
    pub devices: usize,
    pub lookahead: usize,
    /// Samples a device may hold; `None` is unbounded.
    pub capacity: Option<usize>,
    pub delay: DelayModel,
    /// Sleep through modeled transfer times so overlap shows up in wall time.
    pub realtime: bool,
    /// Fixed compute cost per block for the virtual clock; measured when `None`.
    pub compute_seconds: Option<f64>,
}

impl PipelineConfig {
    pub fn new(grid: (usize, usize), devices: usize, lookahead: usize) -> Self {
        PipelineConfig {
            grid,
            devices,
            lookahead,
            capacity: None,
            delay: DelayModel::NONE,
            realtime: true,
            compute_seconds: None,
        }
    }

    pub fn device_workers(&self) -> Vec<DeviceWorker> {
        (0..self.devices)
            .map(|id| DeviceWorker {
                id,
                capacity: self.capacity.unwrap_or(usize::MAX),
                delay: self.delay,
            })
            .collect()
    }
}

#[derive(Clone, Debug)]
pub struct PipelineOutcome {
    pub report: TrainReport,
    pub stages: Vec<StageEvent>,
    /// Modeled epoch durations.
    pub virtual_epoch_seconds: Vec<f64>,
    pub schedules: Vec<RoundSchedule>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
enum Segment {
    Row(usize),
    Col(usize),
}

struct Shared<'a> {
    grid: &'a BlockGrid,
    sorted: &'a [Sample],
    p: &'a FeatureMatrix,
    q: &'a FeatureMatrix,
    scheme: &'a Scheme,
    hyper: &'a Hyperparams,
    rate: f32,
    seed: u64,
    config: &'a PipelineConfig,
    epoch: usize,
    origin: Instant,
}

impl Shared<'_> {
    fn segments(&self, b: BlockId) -> [Segment; 2] {
        [Segment::Row(b.row), Segment::Col(b.col)]
    }

    fn master(&self, s: Segment) -> (&FeatureMatrix, usize, usize) {
        match s {
            Segment::Row(a) => {
                let r = self.grid.rows_of(a);
                (self.p, r.start, r.len())
            }
            Segment::Col(g) => {
                let r = self.grid.cols_of(g);
                (self.q, r.start, r.len())
            }
        }
    }

    fn pause(&self, seconds: f64) {
        if self.config.realtime && seconds > 0.0 {
            std::thread::sleep(Duration::from_secs_f64(seconds));
        }
    }

    fn now(&self) -> f64 {
        self.origin.elapsed().as_secs_f64()
    }
}

struct StagedBlock {
    block: BlockId,
    samples: Vec<Sample>,
    loaded: Vec<(Segment, Arc<FeatureMatrix>)>,
    bytes: usize,
    wall: (f64, f64),
}

fn stage_in(sh: &Shared<'_>, block: BlockId, missing: &[Segment]) -> StagedBlock {
    let wall_start = sh.now();
    let rows = sh.grid.rows_of(block.row);
    let cols = sh.grid.cols_of(block.col);
    let samples: Vec<Sample> = sh.sorted[sh.grid.range(block)]
        .iter()
        .map(|s| Sample::new(s.u - rows.start as u32, s.v - cols.start as u32, s.r))
        .collect();
    let mut bytes = samples.len() * crate::dataset::RECORD_LEN;
    let loaded: Vec<_> = missing
        .iter()
        .map(|&seg| {
            let (m, start, len) = sh.master(seg);
            let copy = m.segment(start, len);
            bytes += copy.size_bytes();
            (seg, Arc::new(copy))
        })
        .collect();
    sh.pause(sh.config.delay.transfer_seconds(bytes));
    StagedBlock {
        block,
        samples,
        loaded,
        bytes,
        wall: (wall_start, sh.now()),
    }
}

fn stage_out(sh: &Shared<'_>, segments: &[(Segment, Arc<FeatureMatrix>)]) -> (usize, (f64, f64)) {
    let wall_start = sh.now();
    let mut bytes = 0;
    for (seg, local) in segments {
        let (m, start, _) = sh.master(*seg);
        m.write_segment(start, local);
        bytes += local.size_bytes();
    }
    sh.pause(sh.config.delay.transfer_seconds(bytes));
    (bytes, (wall_start, sh.now()))
}

#[derive(Default)]
struct DeviceRun {
    updates: usize,
    diverged: bool,
    virtual_seconds: f64,
    events: Vec<StageEvent>,
}

/// Run one device's queue through the stage-in / compute / stage-out pipeline.
fn run_device(sh: &Shared<'_>, device: usize, round: usize, queue: &[BlockId]) -> DeviceRun {
    let mut out = DeviceRun::default();
    if queue.is_empty() {
        return out;
    }
    let delay = sh.config.delay;
    let mut resident: HashMap<Segment, Arc<FeatureMatrix>> = HashMap::new();
    let mut vclock = 0.0f64;
    let event = |block: BlockId, stage: Stage, bytes: usize, v: (f64, f64), w: (f64, f64)| StageEvent {
        epoch: sh.epoch,
        round,
        device,
        block_row: block.row,
        block_col: block.col,
        stage,
        bytes,
        virtual_start: v.0,
        virtual_end: v.1,
        wall_start: w.0,
        wall_end: w.1,
    };

    let missing_for = |resident: &HashMap<Segment, Arc<FeatureMatrix>>, b: BlockId| -> Vec<Segment> {
        sh.segments(b)
            .into_iter()
            .filter(|s| !resident.contains_key(s))
            .collect()
    };

    // fill the pipeline
    let first = stage_in(sh, queue[0], &missing_for(&resident, queue[0]));
    let d0 = delay.transfer_seconds(first.bytes);
    out.events
        .push(event(first.block, Stage::StageIn, first.bytes, (0.0, d0), first.wall));
    vclock += d0;
    resident.extend(first.loaded.iter().cloned());
    let mut current = first;
    let mut evicting: Vec<(Segment, Arc<FeatureMatrix>)> = Vec::new();
    let mut evicting_block = queue[0];

    for b in 0..queue.len() {
        let next_block = queue.get(b + 1).copied();
        let missing = next_block.map(|nb| missing_for(&resident, nb)).unwrap_or_default();
        let block = current.block;
        let p_seg = Arc::clone(&resident[&Segment::Row(block.row)]);
        let q_seg = Arc::clone(&resident[&Segment::Col(block.col)]);
        let mut samples = std::mem::take(&mut current.samples);
        let pass_seed = derive_seed(sh.seed, sh.epoch, sh.grid.index(block));

        let (staged, out_info, (stats, compute_wall)) = std::thread::scope(|scope| {
            let staging = next_block.map(|nb| {
                let missing = &missing;
                scope.spawn(move || stage_in(sh, nb, missing))
            });
            let writing = (!evicting.is_empty()).then(|| {
                let evicting = &evicting;
                scope.spawn(move || stage_out(sh, evicting))
            });
            let c_start = sh.now();
            let stats = run_pass(sh.scheme, &mut samples, &p_seg, &q_seg, sh.rate, sh.hyper, pass_seed);
            let compute_wall = (c_start, sh.now());
            (
                staging.map(|h| h.join().unwrap()),
                writing.map(|h| h.join().unwrap()),
                (stats, compute_wall),
            )
        });

        out.updates += stats.updates;
        out.diverged |= stats.diverged;

        let c = sh.config.compute_seconds.unwrap_or(compute_wall.1 - compute_wall.0);
        let d_in = staged.as_ref().map_or(0.0, |s| delay.transfer_seconds(s.bytes));
        let d_out = out_info.map_or(0.0, |(bytes, _)| delay.transfer_seconds(bytes));
        out.events
            .push(event(block, Stage::Compute, 0, (vclock, vclock + c), compute_wall));
        if let Some(s) = &staged {
            out.events
                .push(event(s.block, Stage::StageIn, s.bytes, (vclock, vclock + d_in), s.wall));
        }
        if let Some((bytes, wall)) = out_info {
            out.events.push(event(
                evicting_block,
                Stage::StageOut,
                bytes,
                (vclock, vclock + d_out),
                wall,
            ));
        }
        vclock += c.max(d_in).max(d_out);

        if out.diverged {
            break;
        }

        // segments of `block` that neither of the next two blocks needs
        let keep: Vec<Segment> = queue[b + 1..queue.len().min(b + 3)]
            .iter()
            .flat_map(|nb| sh.segments(*nb))
            .collect();
        evicting = sh
            .segments(block)
            .into_iter()
            .filter(|s| !keep.contains(s))
            .filter_map(|s| resident.remove(&s).map(|m| (s, m)))
            .collect();
        evicting_block = block;

        if let Some(s) = staged {
            resident.extend(s.loaded.iter().cloned());
            current = s;
        }
    }

    // drain: everything still resident goes home
    evicting.extend(resident.drain());
    let (bytes, wall) = stage_out(sh, &evicting);
    let d_out = delay.transfer_seconds(bytes);
    if bytes > 0 {
        out.events.push(event(
            evicting_block,
            Stage::StageOut,
            bytes,
            (vclock, vclock + d_out),
            wall,
        ));
    }
    vclock += d_out;
    out.virtual_seconds = vclock;
    out
}

/// Train over a block grid spread across `config.devices` simulated devices,
/// each running `scheme` on the blocks it receives.
pub fn run_pipeline(
    dataset: &RatingDataset,
    p: &FeatureMatrix,
    q: &FeatureMatrix,
    hyper: &Hyperparams,
    scheme: &Scheme,
    config: &PipelineConfig,
    opts: &TrainOptions<'_>,
) -> Result<PipelineOutcome> {
    check_model(dataset, p, q, hyper)?;
    crate::model::check_bounds(opts.test, dataset.m, dataset.n)?;
    let (i, j) = config.grid;
    let (grid, sorted) = build_block_grid(&dataset.samples, dataset.m, dataset.n, i, j)?;
    // smallest band and group bound what a device-local scheme may assume
    scheme.validate(dataset.m / i, dataset.n / j)?;

    let schedules: Vec<RoundSchedule> = (0..opts.epochs)
        .map(|t| select_schedule(&grid, config.devices, config.lookahead, epoch_seed(opts.seed, t)))
        .collect::<Result<_>>()?;
    if let Some(cap) = config.capacity {
        for sched in &schedules {
            for queue in device_queues(sched).iter().flatten() {
                let need = queue
                    .windows(2)
                    .map(|w| grid.block_len(w[0]) + grid.block_len(w[1]))
                    .chain(queue.iter().map(|b| grid.block_len(*b)))
                    .max()
                    .unwrap_or(0);
                if need > cap {
                    return Err(Error::config(format!(
                        "device capacity {cap} samples is below the {need} needed for resident plus staged blocks"
                    )));
                }
            }
        }
    }

    let mut meta = metadata(scheme, hyper, p, opts.seed, dataset.len());
    meta.grid = Some(config.grid);
    meta.devices = Some(config.devices);
    meta.lookahead = Some(config.lookahead);
    let mut report = TrainReport::new(meta);
    let mut stages = Vec::new();
    let mut virtual_epoch_seconds = Vec::new();
    let schedule = hyper.schedule();

    for (t, sched) in schedules.iter().enumerate() {
        let lr = schedule.rate(t);
        let origin = Instant::now();
        let sh = Shared {
            grid: &grid,
            sorted: &sorted,
            p,
            q,
            scheme,
            hyper,
            rate: lr as f32,
            seed: opts.seed,
            config,
            epoch: t,
            origin,
        };
        let mut updates = 0;
        let mut diverged = false;
        let mut vtime = 0.0;
        for (r, queues) in device_queues(sched).iter().enumerate() {
            let runs: Vec<DeviceRun> = if queues.len() == 1 {
                vec![run_device(&sh, 0, r, &queues[0])]
            } else {
                std::thread::scope(|scope| {
                    let handles: Vec<_> = queues
                        .iter()
                        .enumerate()
                        .map(|(d, queue)| {
                            let sh = &sh;
                            scope.spawn(move || run_device(sh, d, r, queue))
                        })
                        .collect();
                    handles.into_iter().map(|h| h.join().unwrap()).collect()
                })
            };
            // round barrier
            vtime += runs.iter().map(|d| d.virtual_seconds).fold(0.0, f64::max);
            for run in runs {
                updates += run.updates;
                diverged |= run.diverged;
                stages.extend(run.events);
            }
            if diverged {
                break;
            }
        }
        let epoch_seconds = origin.elapsed().as_secs_f64();
        if diverged {
            return Err(Error::Diverged {
                epoch: t,
                report: Some(Box::new(report)),
            });
        }
        virtual_epoch_seconds.push(vtime);
        let rmse = if opts.test.is_empty() {
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
                test_rmse: rmse,
                updates: updates as u64,
            },
        )?;
        if let (Some(target), Some(r)) = (opts.target_rmse, rmse) {
            if r <= target {
                break;
            }
        }
    }

    let ran = report.records.len();
    Ok(PipelineOutcome {
        report,
        stages,
        virtual_epoch_seconds,
        schedules: schedules.into_iter().take(ran).collect(),
    })
}

/// Per-round device queues. A single device has no cross-device hazards,
/// so its whole epoch runs as one continuous pipeline.
fn device_queues(sched: &RoundSchedule) -> Vec<Vec<Vec<BlockId>>> {
    if sched.devices == 1 {
        vec![vec![sched.order()]]
    } else {
        sched.rounds.clone()
    }
}
