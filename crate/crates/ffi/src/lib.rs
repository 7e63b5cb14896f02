//! C ABI over `mfsgd`.
//!
//! Every function returns an [`MfStatus`]; results come back through out
//! pointers. Objects are opaque handles owned by the caller and released
//! with the matching `*_free` function. On failure the message is kept in
//! a thread-local slot readable with [`mf_last_error`].
//!
//! Handles are not synchronized. A handle may move between threads but must
//! not be used from two threads at once.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use mfsgd::checkpoint::{load_model, save_model, Model};
use mfsgd::dataset::{is_binary, parse_text, read_binary, split, synth_lowrank, TextOptions};
use mfsgd::model::{predict, Precision, Sample};
use mfsgd::pipeline::{run_pipeline, PipelineConfig};
use mfsgd::report::{emit, Format};
use mfsgd::train::{init_model, test_rmse, train, TrainOptions};
use mfsgd::{Error, Hyperparams, RatingDataset, Scheme, TrainReport};

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MfStatus {
    Ok = 0,
    NullPointer = 1,
    Usage = 2,
    Io = 3,
    Format = 4,
    Diverged = 5,
    Panic = 6,
    Config = 7,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MfScheme {
    Serial = 0,
    Hogwild = 1,
    Wavefront = 2,
    GlobalTable = 3,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MfPrecision {
    Full32 = 0,
    Half16 = 1,
}

/// Ratings plus the scale applied to them.
pub struct MfDataset(RatingDataset);

/// Trained factor matrices.
pub struct MfModel(Model);

/// Per-epoch training trace.
pub struct MfReport(TrainReport);

/// Training settings. Initialize with [`mf_train_config_default`].
#[repr(C)]
#[derive(Clone, Copy, Debug)]
pub struct MfTrainConfig {
    pub scheme: MfScheme,
    pub workers: usize,
    pub batch_len: usize,
    /// Wavefront column groups.
    pub columns: usize,
    /// Block grid for the global-table scheme or the device pipeline.
    pub grid_rows: usize,
    pub grid_cols: usize,
    /// Simulated devices; 0 trains without the block pipeline.
    pub devices: usize,
    pub lookahead: usize,
    pub k: usize,
    pub lambda_p: f32,
    pub lambda_q: f32,
    pub alpha: f64,
    pub beta: f64,
    pub epochs: usize,
    /// Early-stop threshold; negative disables it.
    pub target_rmse: f64,
    pub precision: MfPrecision,
    pub seed: u64,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, Default)]
pub struct MfEpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub epoch_seconds: f64,
    /// NaN when no test set was given.
    pub test_rmse: f64,
    pub updates: u64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn status_of(e: &Error) -> MfStatus {
    match e {
        Error::Usage(_) => MfStatus::Usage,
        Error::Config(_) => MfStatus::Config,
        Error::Io(_) => MfStatus::Io,
        Error::Parse { .. } | Error::Format(_) => MfStatus::Format,
        Error::Diverged { .. } => MfStatus::Diverged,
    }
}

struct Fail(MfStatus);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        set_error(e.to_string());
        Fail(status_of(&e))
    }
}

fn null(what: &str) -> Fail {
    set_error(format!("{what} is null"));
    Fail(MfStatus::NullPointer)
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> MfStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            MfStatus::Ok
        }
        Ok(Err(Fail(status))) => status,
        Err(panic) => {
            let msg = panic
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| panic.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("internal error: {msg}"));
            MfStatus::Panic
        }
    }
}

unsafe fn path_arg(p: *const c_char) -> Result<PathBuf, Fail> {
    if p.is_null() {
        return Err(null("path"));
    }
    let s = CStr::from_ptr(p).to_str().map_err(|_| {
        set_error("path is not valid UTF-8");
        Fail(MfStatus::Usage)
    })?;
    Ok(PathBuf::from(s))
}

unsafe fn out_arg<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or_else(|| null(what))
}

unsafe fn ref_arg<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| null(what))
}

fn io(e: std::io::Error) -> Fail {
    Fail::from(Error::Io(e))
}

/// Message for the last failed call on this thread, or null. The pointer
/// stays valid until the next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn mf_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn mf_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Release a string returned by this library.
///
/// # Safety
/// `s` must come from this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn mf_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Load a rating file, text or binary (detected from its header).
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mf_dataset_load(path: *const c_char, one_based: bool, out: *mut *mut MfDataset) -> MfStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let path = path_arg(path)?;
        let mut bytes = Vec::new();
        File::open(&path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(io)?;
        let ds = if is_binary(&bytes) {
            read_binary(&bytes[..])?
        } else {
            parse_text(&bytes[..], TextOptions { one_based, dims: None })?
        };
        *out = Box::into_raw(Box::new(MfDataset(ds)));
        Ok(())
    })
}

/// Build a dataset from parallel arrays of length `len`.
///
/// # Safety
/// `users`, `items` and `ratings` must each point to `len` elements.
#[no_mangle]
pub unsafe extern "C" fn mf_dataset_from_triplets(
    m: usize,
    n: usize,
    users: *const u32,
    items: *const u32,
    ratings: *const f32,
    len: usize,
    out: *mut *mut MfDataset,
) -> MfStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let samples = if len == 0 {
            Vec::new()
        } else {
            if users.is_null() || items.is_null() || ratings.is_null() {
                return Err(null("sample array"));
            }
            let (u, v, r) = (
                std::slice::from_raw_parts(users, len),
                std::slice::from_raw_parts(items, len),
                std::slice::from_raw_parts(ratings, len),
            );
            (0..len).map(|i| Sample::new(u[i], v[i], r[i])).collect()
        };
        *out = Box::into_raw(Box::new(MfDataset(RatingDataset::new(m, n, samples)?)));
        Ok(())
    })
}

/// Synthetic low-rank ratings with Gaussian noise.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mf_dataset_synthetic(
    m: usize,
    n: usize,
    rank: usize,
    density: f64,
    noise_sigma: f64,
    seed: u64,
    out: *mut *mut MfDataset,
) -> MfStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let syn = synth_lowrank(m, n, rank, density, noise_sigma, seed)?;
        *out = Box::into_raw(Box::new(MfDataset(syn.dataset)));
        Ok(())
    })
}

/// Rescale ratings into [0, 4]. Models trained on the result report RMSE
/// in the original rating units.
///
/// # Safety
/// `ds` must be a live dataset handle.
#[no_mangle]
pub unsafe extern "C" fn mf_dataset_normalize(ds: *mut MfDataset) -> MfStatus {
    guard(|| {
        out_arg(ds, "dataset")?.0.normalize();
        Ok(())
    })
}

/// Hold out `fraction` of the samples. Both outputs are new handles.
///
/// # Safety
/// `ds` must be a live dataset handle; `train_out` and `test_out` writable.
#[no_mangle]
pub unsafe extern "C" fn mf_dataset_split(
    ds: *const MfDataset,
    fraction: f64,
    seed: u64,
    train_out: *mut *mut MfDataset,
    test_out: *mut *mut MfDataset,
) -> MfStatus {
    guard(|| {
        let ds = &ref_arg(ds, "dataset")?.0;
        let train_out = out_arg(train_out, "train_out")?;
        let test_out = out_arg(test_out, "test_out")?;
        let pair = split(ds, fraction, seed)?;
        let test = RatingDataset {
            m: ds.m,
            n: ds.n,
            samples: pair.test,
            scale: pair.train.scale,
        };
        *train_out = Box::into_raw(Box::new(MfDataset(pair.train)));
        *test_out = Box::into_raw(Box::new(MfDataset(test)));
        Ok(())
    })
}

/// Dimensions and sample count.
///
/// # Safety
/// `ds` must be a live dataset handle; out pointers may be null.
#[no_mangle]
pub unsafe extern "C" fn mf_dataset_shape(
    ds: *const MfDataset,
    m: *mut usize,
    n: *mut usize,
    len: *mut usize,
) -> MfStatus {
    guard(|| {
        let ds = &ref_arg(ds, "dataset")?.0;
        for (p, v) in [(m, ds.m), (n, ds.n), (len, ds.len())] {
            if let Some(p) = p.as_mut() {
                *p = v;
            }
        }
        Ok(())
    })
}

/// # Safety
/// `ds` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn mf_dataset_free(ds: *mut MfDataset) {
    if !ds.is_null() {
        drop(Box::from_raw(ds));
    }
}

/// Defaults: serial, one worker, k = 32, lambda 0.05, alpha 0.08, beta 0.3,
/// 20 epochs, full32.
///
/// # Safety
/// `cfg` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mf_train_config_default(cfg: *mut MfTrainConfig) -> MfStatus {
    guard(|| {
        *out_arg(cfg, "config")? = MfTrainConfig {
            scheme: MfScheme::Serial,
            workers: 1,
            batch_len: mfsgd::schedule::DEFAULT_BATCH_LEN,
            columns: 0,
            grid_rows: 0,
            grid_cols: 0,
            devices: 0,
            lookahead: 1,
            k: 32,
            lambda_p: 0.05,
            lambda_q: 0.05,
            alpha: 0.08,
            beta: 0.3,
            epochs: 20,
            target_rmse: -1.0,
            precision: MfPrecision::Full32,
            seed: 0,
        };
        Ok(())
    })
}

fn scheme_of(cfg: &MfTrainConfig) -> Scheme {
    match cfg.scheme {
        MfScheme::Serial => Scheme::Serial,
        MfScheme::Hogwild => Scheme::BatchHogwild {
            workers: cfg.workers,
            batch_len: cfg.batch_len,
        },
        MfScheme::Wavefront => Scheme::Wavefront {
            workers: cfg.workers,
            columns: if cfg.columns == 0 { 2 * cfg.workers } else { cfg.columns },
        },
        MfScheme::GlobalTable => Scheme::GlobalTable {
            workers: cfg.workers,
            rows: if cfg.grid_rows == 0 {
                cfg.workers + 1
            } else {
                cfg.grid_rows
            },
            cols: if cfg.grid_cols == 0 {
                cfg.workers + 1
            } else {
                cfg.grid_cols
            },
        },
    }
}

/// Train a fresh model on `train_ds`, evaluating on `test_ds` (may be null)
/// after every epoch. On divergence `report_out` still receives the epochs
/// completed so far and `model_out` is left untouched.
///
/// # Safety
/// Handles must be live; `cfg` readable; out pointers writable.
#[no_mangle]
pub unsafe extern "C" fn mf_train(
    train_ds: *const MfDataset,
    test_ds: *const MfDataset,
    cfg: *const MfTrainConfig,
    model_out: *mut *mut MfModel,
    report_out: *mut *mut MfReport,
) -> MfStatus {
    guard(|| {
        let ds = &ref_arg(train_ds, "train dataset")?.0;
        let cfg = ref_arg(cfg, "config")?;
        let model_out = out_arg(model_out, "model_out")?;
        let report_out = out_arg(report_out, "report_out")?;
        let test: &[Sample] = match test_ds.as_ref() {
            Some(t) => {
                if t.0.scale != ds.scale {
                    return Err(Error::Usage("test set is scaled differently from the training set".into()).into());
                }
                &t.0.samples
            }
            None => &[],
        };
        let hyper = Hyperparams {
            k: cfg.k,
            lambda_p: cfg.lambda_p,
            lambda_q: cfg.lambda_q,
            alpha: cfg.alpha,
            beta: cfg.beta,
        };
        hyper.validate()?;
        let precision = match cfg.precision {
            MfPrecision::Full32 => Precision::Full32,
            MfPrecision::Half16 => Precision::Half16,
        };
        let scheme = scheme_of(cfg);
        let (p, q) = init_model(ds.m, ds.n, cfg.k, precision, cfg.seed);
        let opts = TrainOptions::new(cfg.epochs, cfg.seed)
            .with_test(test)
            .with_target((cfg.target_rmse >= 0.0).then_some(cfg.target_rmse));
        let result = if cfg.devices == 0 {
            train(ds, &p, &q, &hyper, &scheme, &opts).map(|o| o.report)
        } else {
            let pc = PipelineConfig::new((cfg.grid_rows, cfg.grid_cols), cfg.devices, cfg.lookahead);
            run_pipeline(ds, &p, &q, &hyper, &scheme, &pc, &opts).map(|o| o.report)
        };
        match result {
            Ok(report) => {
                *report_out = Box::into_raw(Box::new(MfReport(report)));
                *model_out = Box::into_raw(Box::new(MfModel(Model { p, q, scale: ds.scale })));
                Ok(())
            }
            Err(Error::Diverged { epoch, report }) => {
                if let Some(r) = report {
                    *report_out = Box::into_raw(Box::new(MfReport(*r)));
                }
                Err(Error::Diverged { epoch, report: None }.into())
            }
            Err(e) => Err(e.into()),
        }
    })
}

/// Predicted rating for `(u, v)` in the original rating units.
///
/// # Safety
/// `model` must be live; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn mf_model_predict(model: *const MfModel, u: usize, v: usize, out: *mut f32) -> MfStatus {
    guard(|| {
        let m = &ref_arg(model, "model")?.0;
        let out = out_arg(out, "out")?;
        *out = m.scale.to_raw(predict(&m.p, &m.q, u, v)?);
        Ok(())
    })
}

/// RMSE of `model` on `ds`, in the original rating units.
///
/// # Safety
/// Handles must be live; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn mf_model_rmse(model: *const MfModel, ds: *const MfDataset, out: *mut f64) -> MfStatus {
    guard(|| {
        let m = &ref_arg(model, "model")?.0;
        let ds = &ref_arg(ds, "dataset")?.0;
        let out = out_arg(out, "out")?;
        if ds.m > m.p.rows() || ds.n > m.q.rows() {
            return Err(Error::Usage("dataset is larger than the model".into()).into());
        }
        // bring the samples into the model's stored domain
        let samples: Vec<Sample> = ds
            .samples
            .iter()
            .map(|s| Sample::new(s.u, s.v, m.scale.to_stored(ds.scale.to_raw(s.r))))
            .collect();
        *out = test_rmse(&samples, &m.p, &m.q, m.scale)?;
        Ok(())
    })
}

/// Rows of P, rows of Q and rank.
///
/// # Safety
/// `model` must be live; out pointers may be null.
#[no_mangle]
pub unsafe extern "C" fn mf_model_shape(
    model: *const MfModel,
    m: *mut usize,
    n: *mut usize,
    k: *mut usize,
) -> MfStatus {
    guard(|| {
        let md = &ref_arg(model, "model")?.0;
        for (p, v) in [(m, md.p.rows()), (n, md.q.rows()), (k, md.p.k())] {
            if let Some(p) = p.as_mut() {
                *p = v;
            }
        }
        Ok(())
    })
}

/// # Safety
/// `model` must be live; `path` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn mf_model_save(model: *const MfModel, path: *const c_char) -> MfStatus {
    guard(|| {
        let m = &ref_arg(model, "model")?.0;
        let path = path_arg(path)?;
        let w = BufWriter::new(File::create(&path).map_err(io)?);
        save_model(&m.p, &m.q, m.scale, w)?;
        Ok(())
    })
}

/// # Safety
/// `path` NUL-terminated; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn mf_model_load(path: *const c_char, out: *mut *mut MfModel) -> MfStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let path = path_arg(path)?;
        let model = load_model(BufReader::new(File::open(&path).map_err(io)?))?;
        *out = Box::into_raw(Box::new(MfModel(model)));
        Ok(())
    })
}

/// # Safety
/// `model` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn mf_model_free(model: *mut MfModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Number of completed epochs.
///
/// # Safety
/// `report` must be live; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn mf_report_len(report: *const MfReport, out: *mut usize) -> MfStatus {
    guard(|| {
        *out_arg(out, "out")? = ref_arg(report, "report")?.0.records.len();
        Ok(())
    })
}

/// # Safety
/// `report` must be live; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn mf_report_epoch(report: *const MfReport, index: usize, out: *mut MfEpochRecord) -> MfStatus {
    guard(|| {
        let r = &ref_arg(report, "report")?.0;
        let out = out_arg(out, "out")?;
        let rec = r.records.get(index).ok_or_else(|| {
            Fail::from(Error::Usage(format!(
                "epoch {index} out of range for a {}-epoch report",
                r.records.len()
            )))
        })?;
        *out = MfEpochRecord {
            epoch: rec.epoch,
            lr: rec.lr,
            epoch_seconds: rec.epoch_seconds,
            test_rmse: rec.test_rmse.unwrap_or(f64::NAN),
            updates: rec.updates,
        };
        Ok(())
    })
}

/// Render the report as CSV (`json == false`) or JSON. Free the result
/// with [`mf_string_free`].
///
/// # Safety
/// `report` must be live; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn mf_report_render(report: *const MfReport, json: bool, out: *mut *mut c_char) -> MfStatus {
    guard(|| {
        let r = &ref_arg(report, "report")?.0;
        let out = out_arg(out, "out")?;
        let mut buf = Vec::new();
        emit(r, if json { Format::Json } else { Format::Csv }, &mut buf)?;
        *out = CString::new(buf).expect("reports contain no NUL").into_raw();
        Ok(())
    })
}

/// # Safety
/// `report` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn mf_report_free(report: *mut MfReport) {
    if !report.is_null() {
        drop(Box::from_raw(report));
    }
}
