//! Command-line front end: `train`, `bench`, `generate`, `evaluate` and
//! `convert`.
//!
//! Exit codes: 0 success, 2 usage or configuration error, 3 I/O or file
//! format error, 4 training diverged.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::checkpoint::{load_model, save_model};
use crate::dataset::{is_binary, parse_text, read_binary, split, synth_lowrank, write_binary, write_text, TextOptions};
use crate::grid::{feasibility_check, Feasibility, DEFAULT_SAFETY_FACTOR};
use crate::model::{rmse, Hyperparams, Precision, Sample};
use crate::pipeline::{run_pipeline, PipelineConfig};
use crate::report::{emit, emit_trace_csv, Format, TrainReport};
use crate::schedule::{Scheme, DEFAULT_BATCH_LEN};
use crate::train::{init_model, train, TrainOptions};
use crate::{Error, RatingDataset, Result};

pub const EXIT_OK: u8 = 0;
pub const EXIT_USAGE: u8 = 2;
pub const EXIT_IO: u8 = 3;
pub const EXIT_DIVERGED: u8 = 4;

/// Environment variable supplying the default `--workers`.
pub const THREADS_ENV: &str = "MFSGD_THREADS";

#[derive(Debug, Parser)]
#[command(name = "mfsgd", version, about = "Parallel SGD matrix factorization")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train factor matrices and emit a per-epoch report.
    Train(TrainArgs),
    /// Sweep worker counts and report throughput for each.
    Bench(BenchArgs),
    /// Write a synthetic low-rank dataset and its ground-truth factors.
    Generate(GenerateArgs),
    /// RMSE of a saved model on a rating file.
    Evaluate(EvaluateArgs),
    /// Transcode a rating file between text and binary.
    Convert(ConvertArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SchemeName {
    Serial,
    Hogwild,
    Wavefront,
    GlobalTable,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    Netflix,
    Yahoo,
    Hugewiki,
}

impl Preset {
    /// `(k, lambda, alpha, beta)`.
    pub fn values(self) -> (usize, f32, f64, f64) {
        match self {
            Preset::Netflix => (128, 0.05, 0.08, 0.3),
            Preset::Yahoo => (128, 1.0, 0.08, 0.2),
            Preset::Hugewiki => (128, 0.03, 0.08, 0.3),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum DataFormat {
    Text,
    Binary,
}

/// `IxJ`, e.g. `4x8`.
pub fn parse_grid(s: &str) -> std::result::Result<(usize, usize), String> {
    let (a, b) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| format!("expected IxJ, got {s:?}"))?;
    let i = a.trim().parse().map_err(|_| format!("bad row count in {s:?}"))?;
    let j = b.trim().parse().map_err(|_| format!("bad column count in {s:?}"))?;
    Ok((i, j))
}

#[derive(Clone, Debug, Args)]
pub struct TrainArgs {
    /// Training ratings, text (`u v r` per line) or binary.
    #[arg(long)]
    pub train: PathBuf,
    /// Held-out ratings. Without it, `--test-fraction` of the training file is held out.
    #[arg(long)]
    pub test: Option<PathBuf>,
    #[arg(long, default_value_t = 0.0)]
    pub test_fraction: f64,
    /// Text files use 1-based indices.
    #[arg(long)]
    pub one_based: bool,
    /// Train on raw ratings instead of rescaling them to [0, 4].
    #[arg(long)]
    pub no_normalize: bool,

    #[arg(long, value_enum, default_value = "serial")]
    pub scheme: SchemeName,
    #[arg(short = 's', long, env = THREADS_ENV, default_value_t = 1)]
    pub workers: usize,
    /// Samples per batch-Hogwild! fetch.
    #[arg(short = 'f', long, default_value_t = DEFAULT_BATCH_LEN)]
    pub batch_len: usize,
    /// Column groups for wavefront-update (defaults to 2s).
    #[arg(short = 'c', long)]
    pub columns: Option<usize>,
    /// Block grid for the global-table scheme or the device pipeline.
    #[arg(long, value_parser = parse_grid)]
    pub grid: Option<(usize, usize)>,
    /// Simulated devices; enables the block pipeline.
    #[arg(long)]
    pub devices: Option<usize>,
    /// Blocks per device per round in the pipeline.
    #[arg(long, default_value_t = 1)]
    pub lookahead: usize,
    /// Samples a device may hold.
    #[arg(long)]
    pub capacity: Option<usize>,
    /// Per-transfer latency in seconds for simulated devices.
    #[arg(long, default_value_t = 0.0)]
    pub transfer_latency: f64,
    /// Skip the worker-count feasibility check.
    #[arg(long)]
    pub force: bool,

    /// Named hyperparameter set; explicit flags override it.
    #[arg(long, value_enum)]
    pub preset: Option<Preset>,
    #[arg(short = 'k', long)]
    pub rank: Option<usize>,
    #[arg(long)]
    pub lambda_p: Option<f32>,
    #[arg(long)]
    pub lambda_q: Option<f32>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long, default_value_t = 20)]
    pub epochs: usize,
    /// Stop after the first epoch with test RMSE at or below this.
    #[arg(long)]
    pub target_rmse: Option<f64>,
    #[arg(long, value_enum, default_value = "full32")]
    pub precision: PrecisionArg,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,

    /// Report destination; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "csv")]
    pub format: Format,
    /// Save the trained factors here.
    #[arg(long)]
    pub model_out: Option<PathBuf>,
    /// Write block-level conflict events here (lock-based schemes).
    #[arg(long)]
    pub trace_out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum PrecisionArg {
    Full32,
    Half16,
}

impl From<PrecisionArg> for Precision {
    fn from(p: PrecisionArg) -> Self {
        match p {
            PrecisionArg::Full32 => Precision::Full32,
            PrecisionArg::Half16 => Precision::Half16,
        }
    }
}

#[derive(Clone, Debug, Args)]
pub struct BenchArgs {
    #[command(flatten)]
    pub train: TrainArgs,
    /// Worker counts to sweep.
    #[arg(long, value_delimiter = ',', default_value = "1,2,4,8")]
    pub workers_list: Vec<usize>,
}

#[derive(Clone, Debug, Args)]
pub struct GenerateArgs {
    #[arg(long)]
    pub m: usize,
    #[arg(long)]
    pub n: usize,
    #[arg(long, default_value_t = 8)]
    pub rank: usize,
    #[arg(long)]
    pub density: f64,
    #[arg(long, default_value_t = 0.0)]
    pub noise: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Dataset destination.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value = "binary")]
    pub to: DataFormat,
    /// Ground-truth factors, saved as a model file.
    #[arg(long)]
    pub truth: Option<PathBuf>,
}

#[derive(Clone, Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub test: PathBuf,
    #[arg(long)]
    pub one_based: bool,
}

#[derive(Clone, Debug, Args)]
pub struct ConvertArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long, value_enum)]
    pub to: DataFormat,
    #[arg(long)]
    pub one_based: bool,
}

/// Fully resolved training configuration.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub scheme: Scheme,
    pub hyper: Hyperparams,
    pub precision: Precision,
    pub pipeline: Option<PipelineConfig>,
    pub epochs: usize,
    pub target_rmse: Option<f64>,
    pub seed: u64,
    pub normalize: bool,
}

impl TrainArgs {
    pub fn hyperparams(&self) -> Result<Hyperparams> {
        let (k, lambda, alpha, beta) = self.preset.map_or((32, 0.05, 0.08, 0.3), Preset::values);
        let hyper = Hyperparams {
            k: self.rank.unwrap_or(k),
            lambda_p: self.lambda_p.unwrap_or(lambda),
            lambda_q: self.lambda_q.unwrap_or(lambda),
            alpha: self.alpha.unwrap_or(alpha),
            beta: self.beta.unwrap_or(beta),
        };
        hyper.validate()?;
        Ok(hyper)
    }

    pub fn scheme(&self, workers: usize) -> Result<Scheme> {
        if workers == 0 {
            return Err(Error::usage("--workers must be at least 1"));
        }
        Ok(match self.scheme {
            SchemeName::Serial => {
                if workers != 1 {
                    return Err(Error::usage("the serial scheme runs one worker; drop --workers"));
                }
                Scheme::Serial
            }
            SchemeName::Hogwild => Scheme::BatchHogwild {
                workers,
                batch_len: self.batch_len,
            },
            SchemeName::Wavefront => Scheme::Wavefront {
                workers,
                columns: self.columns.unwrap_or(2 * workers),
            },
            SchemeName::GlobalTable => {
                let (rows, cols) = self
                    .grid
                    .filter(|_| self.devices.is_none())
                    .unwrap_or((workers + 1, workers + 1));
                Scheme::GlobalTable { workers, rows, cols }
            }
        })
    }

    /// Resolve and validate everything that does not need the data.
    pub fn resolve(&self, workers: usize) -> Result<RunConfig> {
        if !(0.0..1.0).contains(&self.test_fraction) {
            return Err(Error::usage("--test-fraction must lie in [0, 1)"));
        }
        if self.test.is_some() && self.test_fraction > 0.0 {
            return Err(Error::usage("--test and --test-fraction are exclusive"));
        }
        if let Some(t) = self.target_rmse {
            if t.is_nan() || t < 0.0 {
                return Err(Error::usage("--target-rmse must be non-negative"));
            }
        }
        let pipeline = match self.devices {
            None => {
                if self.capacity.is_some() || self.transfer_latency != 0.0 {
                    return Err(Error::usage("--capacity and --transfer-latency need --devices"));
                }
                None
            }
            Some(devices) => {
                let grid = self.grid.ok_or_else(|| Error::usage("--devices needs --grid IxJ"))?;
                if !(self.transfer_latency >= 0.0 && self.transfer_latency.is_finite()) {
                    return Err(Error::usage("--transfer-latency must be a non-negative number"));
                }
                let mut cfg = PipelineConfig::new(grid, devices, self.lookahead);
                cfg.capacity = self.capacity;
                cfg.delay = crate::pipeline::DelayModel::fixed(self.transfer_latency);
                Some(cfg)
            }
        };
        let scheme = self.scheme(workers)?;
        if pipeline.is_some() && matches!(scheme, Scheme::GlobalTable { .. }) {
            return Err(Error::usage(
                "the global-table scheme cannot run inside the device pipeline",
            ));
        }
        Ok(RunConfig {
            scheme,
            hyper: self.hyperparams()?,
            precision: self.precision.into(),
            pipeline,
            epochs: self.epochs,
            target_rmse: self.target_rmse,
            seed: self.seed,
            normalize: !self.no_normalize,
        })
    }
}

impl RunConfig {
    /// Checks that depend on the problem size.
    pub fn validate_for(&self, m: usize, n: usize, force: bool) -> Result<()> {
        match &self.pipeline {
            None => self.scheme.validate(m, n),
            Some(p) => {
                let (i, j) = p.grid;
                let grid = crate::grid::BlockGrid::shape(m, n, i, j)?;
                crate::pipeline::select_schedule(&grid, p.devices, p.lookahead, 0)?;
                self.scheme.validate(m / i, n / j)?;
                if !force {
                    if let Feasibility::Fail { bound, .. } =
                        feasibility_check(self.scheme.workers(), m, n, i, j, DEFAULT_SAFETY_FACTOR)
                    {
                        return Err(Error::usage(format!(
                            "{} workers per block is too many for a {i}x{j} grid over {m}x{n} (needs fewer than {bound:.1}); use --force to override",
                            self.scheme.workers()
                        )));
                    }
                }
                Ok(())
            }
        }
    }
}

pub fn load_dataset(path: &Path, opts: TextOptions) -> Result<RatingDataset> {
    let mut bytes = Vec::new();
    File::open(path)
        .map_err(|e| io_context(e, path))?
        .read_to_end(&mut bytes)?;
    if is_binary(&bytes) {
        let ds = read_binary(&bytes[..])?;
        if let Some((m, n)) = opts.dims {
            if ds.m > m || ds.n > n {
                return Err(Error::format(format!(
                    "{} is {}x{}, larger than the {m}x{n} training matrix",
                    path.display(),
                    ds.m,
                    ds.n
                )));
            }
            return RatingDataset::new(m, n, ds.samples);
        }
        Ok(ds)
    } else {
        parse_text(&bytes[..], opts)
    }
}

fn io_context(e: std::io::Error, path: &Path) -> Error {
    Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).map_err(|e| io_context(e, path))?))
}

struct Prepared {
    train: RatingDataset,
    test: Vec<Sample>,
}

fn prepare(args: &TrainArgs, cfg: &RunConfig) -> Result<Prepared> {
    let text = TextOptions {
        one_based: args.one_based,
        dims: None,
    };
    let mut train = load_dataset(&args.train, text)?;
    let mut test = match &args.test {
        Some(path) => {
            load_dataset(
                path,
                TextOptions {
                    dims: Some((train.m, train.n)),
                    ..text
                },
            )?
            .samples
        }
        None => Vec::new(),
    };
    if cfg.normalize {
        let scale = train.normalize();
        scale.apply(&mut test);
    }
    if args.test_fraction > 0.0 {
        let pair = split(&train, args.test_fraction, cfg.seed)?;
        train = pair.train;
        test = pair.test;
    }
    Ok(Prepared { train, test })
}

/// Train once with `workers`; returns the report and the trained model.
fn run_training(
    args: &TrainArgs,
    cfg: &RunConfig,
    data: &Prepared,
) -> Result<(TrainReport, crate::checkpoint::Model, Option<crate::ConflictTrace>)> {
    let ds = &data.train;
    let (p, q) = init_model(ds.m, ds.n, cfg.hyper.k, cfg.precision, cfg.seed);
    let opts = TrainOptions::new(cfg.epochs, cfg.seed)
        .with_test(&data.test)
        .with_target(cfg.target_rmse);
    let (report, trace) = match &cfg.pipeline {
        None => {
            let out = train(ds, &p, &q, &cfg.hyper, &cfg.scheme, &opts)?;
            (out.report, out.trace)
        }
        Some(pc) => (
            run_pipeline(ds, &p, &q, &cfg.hyper, &cfg.scheme, pc, &opts)?.report,
            None,
        ),
    };
    if args.trace_out.is_some() && trace.is_none() {
        log::warn!("scheme {} produces no conflict trace", cfg.scheme.name());
    }
    Ok((report, crate::checkpoint::Model { p, q, scale: ds.scale }, trace))
}

fn with_sink<F>(out: &Option<PathBuf>, stdout: &mut dyn Write, f: F) -> Result<()>
where
    F: FnOnce(&mut dyn Write) -> Result<()>,
{
    match out {
        Some(path) => {
            let mut w = create(path)?;
            f(&mut w)?;
            w.flush()?;
            Ok(())
        }
        None => f(stdout),
    }
}

pub fn cmd_train(args: &TrainArgs, stdout: &mut dyn Write) -> Result<TrainReport> {
    let cfg = args.resolve(args.workers)?;
    let data = prepare(args, &cfg)?;
    cfg.validate_for(data.train.m, data.train.n, args.force)?;
    log::info!(
        "training {} on {}x{} with {} samples",
        cfg.scheme,
        data.train.m,
        data.train.n,
        data.train.len()
    );
    let (report, model, trace) = run_training(args, &cfg, &data)?;
    with_sink(&args.out, stdout, |w| emit(&report, args.format, w).map(|_| ()))?;
    if let Some(path) = &args.model_out {
        let mut w = create(path)?;
        save_model(&model.p, &model.q, model.scale, &mut w)?;
    }
    if let (Some(path), Some(trace)) = (&args.trace_out, &trace) {
        emit_trace_csv(trace, create(path)?)?;
    }
    Ok(report)
}

/// One row of a throughput sweep.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct BenchRow {
    pub workers: usize,
    pub updates_per_sec: f64,
    pub elapsed_seconds: f64,
    pub wait_fraction: f64,
    pub final_rmse: Option<f64>,
}

pub fn cmd_bench(args: &BenchArgs, stdout: &mut dyn Write) -> Result<Vec<BenchRow>> {
    if args.workers_list.is_empty() {
        return Err(Error::usage("--workers-list is empty"));
    }
    let t = &args.train;
    // validate every sweep point before any training
    let cfgs = args
        .workers_list
        .iter()
        .map(|&s| t.resolve(s))
        .collect::<Result<Vec<_>>>()?;
    let data = prepare(t, &cfgs[0])?;
    for cfg in &cfgs {
        cfg.validate_for(data.train.m, data.train.n, t.force)?;
    }
    let mut rows = Vec::new();
    for (cfg, &s) in cfgs.iter().zip(&args.workers_list) {
        let (report, _, _) = run_training(t, cfg, &data)?;
        rows.push(BenchRow {
            workers: s,
            updates_per_sec: report.updates_per_sec,
            elapsed_seconds: report.elapsed_seconds,
            wait_fraction: report.wait_fraction(),
            final_rmse: report.final_rmse(),
        });
    }
    with_sink(&t.out, stdout, |w| match t.format {
        Format::Json => {
            serde_json::to_writer_pretty(&mut *w, &rows).map_err(|e| Error::format(e.to_string()))?;
            writeln!(w)?;
            Ok(())
        }
        Format::Csv => {
            let mut c = csv::Writer::from_writer(w);
            for r in &rows {
                c.serialize(r).map_err(|e| Error::format(e.to_string()))?;
            }
            c.flush()?;
            Ok(())
        }
    })?;
    Ok(rows)
}

fn write_dataset(ds: &RatingDataset, path: &Path, to: DataFormat) -> Result<()> {
    let mut w = create(path)?;
    match to {
        DataFormat::Binary => write_binary(ds, &mut w)?,
        DataFormat::Text => write_text(&ds.samples, &mut w)?,
    }
    w.flush()?;
    Ok(())
}

pub fn cmd_generate(args: &GenerateArgs) -> Result<()> {
    let syn = synth_lowrank(args.m, args.n, args.rank, args.density, args.noise, args.seed)?;
    write_dataset(&syn.dataset, &args.out, args.to)?;
    if let Some(path) = &args.truth {
        let mut w = create(path)?;
        save_model(&syn.p, &syn.q, crate::RatingScale::IDENTITY, &mut w)?;
    }
    Ok(())
}

/// RMSE of the saved model on raw-domain ratings.
pub fn cmd_evaluate(args: &EvaluateArgs, stdout: &mut dyn Write) -> Result<f64> {
    let model = load_model(BufReader::new(
        File::open(&args.model).map_err(|e| io_context(e, &args.model))?,
    ))?;
    let ds = load_dataset(
        &args.test,
        TextOptions {
            one_based: args.one_based,
            dims: Some((model.p.rows(), model.q.rows())),
        },
    )?;
    let mut samples = ds.samples;
    model.scale.apply(&mut samples);
    let value = rmse(&samples, &model.p, &model.q)? / model.scale.factor as f64;
    writeln!(stdout, "{value}")?;
    Ok(value)
}

pub fn cmd_convert(args: &ConvertArgs) -> Result<()> {
    let ds = load_dataset(
        &args.input,
        TextOptions {
            one_based: args.one_based,
            dims: None,
        },
    )?;
    write_dataset(&ds, &args.output, args.to)
}

pub fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Usage(_) | Error::Config(_) => EXIT_USAGE,
        Error::Io(_) | Error::Parse { .. } | Error::Format(_) => EXIT_IO,
        Error::Diverged { .. } => EXIT_DIVERGED,
    }
}

pub fn execute(cli: &Cli, stdout: &mut dyn Write) -> Result<()> {
    match &cli.command {
        Command::Train(a) => cmd_train(a, stdout).map(|_| ()),
        Command::Bench(a) => cmd_bench(a, stdout).map(|_| ()),
        Command::Generate(a) => cmd_generate(a),
        Command::Evaluate(a) => cmd_evaluate(a, stdout).map(|_| ()),
        Command::Convert(a) => cmd_convert(a),
    }
}

/// Parse `args`, run, and map the outcome to an exit code.
pub fn main_with<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_USAGE } else { EXIT_OK });
        }
    };
    let stdout = std::io::stdout();
    let mut lock = stdout.lock();
    match execute(&cli, &mut lock) {
        Ok(()) => ExitCode::from(EXIT_OK),
        Err(e) => {
            eprintln!("mfsgd: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn train_args(extra: &[&str]) -> TrainArgs {
        let mut argv = vec!["mfsgd", "train", "--train", "x.txt"];
        argv.extend_from_slice(extra);
        match Cli::try_parse_from(argv).unwrap().command {
            Command::Train(a) => a,
            _ => unreachable!(),
        }
    }

    #[test]
    fn presets() {
        let h = train_args(&["--preset", "netflix"]).hyperparams().unwrap();
        assert_eq!(
            (h.k, h.lambda_p, h.lambda_q, h.alpha, h.beta),
            (128, 0.05, 0.05, 0.08, 0.3)
        );
        let h = train_args(&["--preset", "yahoo"]).hyperparams().unwrap();
        assert_eq!((h.k, h.lambda_p, h.alpha, h.beta), (128, 1.0, 0.08, 0.2));
        let h = train_args(&["--preset", "hugewiki"]).hyperparams().unwrap();
        assert_eq!((h.k, h.lambda_p, h.alpha, h.beta), (128, 0.03, 0.08, 0.3));
        let h = train_args(&["--preset", "hugewiki", "-k", "16", "--lambda-q", "0.1"])
            .hyperparams()
            .unwrap();
        assert_eq!((h.k, h.lambda_p, h.lambda_q), (16, 0.03, 0.1));
    }

    #[test]
    fn grid_flag() {
        assert_eq!(parse_grid("4x8"), Ok((4, 8)));
        assert_eq!(parse_grid("2X2"), Ok((2, 2)));
        assert!(parse_grid("4").is_err());
        assert!(parse_grid("ax2").is_err());
    }

    #[test]
    fn invalid_combinations_rejected_upfront() {
        let a = train_args(&["--scheme", "wavefront", "-s", "4", "-c", "2"]);
        let cfg = a.resolve(4).unwrap();
        assert!(matches!(cfg.validate_for(100, 100, false), Err(Error::Usage(_))));
        assert!(train_args(&["--devices", "2"]).resolve(1).is_err());
        assert!(train_args(&["--scheme", "serial", "-s", "2"]).resolve(2).is_err());
        assert!(train_args(&["--test-fraction", "1.5"]).resolve(1).is_err());
    }

    #[test]
    fn pipeline_feasibility_needs_force() {
        let a = train_args(&["--scheme", "hogwild", "--devices", "1", "--grid", "4x4"]);
        let cfg = a.resolve(8).unwrap();
        // 100/4 = 25 rows per band; 8 workers exceed 25/20
        assert!(matches!(cfg.validate_for(100, 100, false), Err(Error::Usage(_))));
        assert!(cfg.validate_for(100, 100, true).is_ok());
        assert!(cfg.validate_for(100_000, 100_000, false).is_ok());
    }

    #[test]
    fn exit_codes_are_distinct() {
        let codes = [
            exit_code(&Error::usage("x")),
            exit_code(&Error::Io(std::io::Error::other("x"))),
            exit_code(&Error::Diverged { epoch: 0, report: None }),
        ];
        assert!(codes.iter().all(|&c| c != EXIT_OK));
        assert_ne!(codes[0], codes[1]);
        assert_ne!(codes[1], codes[2]);
        assert_ne!(codes[0], codes[2]);
    }
}
