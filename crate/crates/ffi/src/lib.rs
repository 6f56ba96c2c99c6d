//! C ABI over the experiment pipeline, trained models and the W₁ metric.
//!
//! Every fallible call returns an [`MsgenStatus`]; on failure the message is
//! kept per thread and read with [`msgen_last_error`]. Objects are opaque
//! handles created by `*_load`/`*_from_json` and released with `*_free`.
//! Panics are caught at the boundary and reported as `MSGEN_STATUS_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use msgen::eval::{wasserstein1, MetricsReport};
use msgen::pipeline::{run_pipeline, run_stage, ExperimentConfig, Stage, TrainedMethod};
use msgen::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MsgenStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Config = 3,
    Io = 4,
    MissingArtifact = 5,
    Training = 6,
    Numerical = 7,
    Panic = 8,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MsgenStage {
    Simulate = 0,
    FitPropensity = 1,
    Train = 2,
    Generate = 3,
    Evaluate = 4,
}

impl From<MsgenStage> for Stage {
    fn from(s: MsgenStage) -> Self {
        match s {
            MsgenStage::Simulate => Stage::Simulate,
            MsgenStage::FitPropensity => Stage::FitPropensity,
            MsgenStage::Train => Stage::Train,
            MsgenStage::Generate => Stage::Generate,
            MsgenStage::Evaluate => Stage::Evaluate,
        }
    }
}

pub struct MsgenExperiment {
    cfg: ExperimentConfig,
}

pub struct MsgenReport {
    report: MetricsReport,
}

pub struct MsgenModel {
    method: TrainedMethod,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(err: &Error) -> MsgenStatus {
    match err {
        Error::Stage { source, .. } => status_of(source),
        Error::Config(_) => MsgenStatus::Config,
        Error::Io { .. } | Error::Json(_) | Error::Csv(_) => MsgenStatus::Io,
        Error::MissingArtifact(_) => MsgenStatus::MissingArtifact,
        Error::Training { .. } => MsgenStatus::Training,
        Error::NonFinite(_) => MsgenStatus::Numerical,
        _ => MsgenStatus::InvalidArgument,
    }
}

struct Failure(MsgenStatus, String);

type FfiResult = Result<(), Failure>;

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(status_of(&e), e.to_string())
    }
}

fn null_arg(name: &str) -> Failure {
    Failure(MsgenStatus::NullPointer, format!("{name} is null"))
}

fn guard(f: impl FnOnce() -> FfiResult) -> MsgenStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => MsgenStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_last_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_last_error(format!("panic: {msg}"));
            MsgenStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null_arg(name));
    }
    CStr::from_ptr(p).to_str().map_err(|_| {
        Failure(
            MsgenStatus::InvalidArgument,
            format!("{name} is not valid UTF-8"),
        )
    })
}

unsafe fn slice_arg<'a, T>(p: *const T, len: usize, name: &str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null_arg(name));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

fn boxed<T>(value: T) -> *mut T {
    Box::into_raw(Box::new(value))
}

/// Most recent error message on this thread, or NULL. Valid until the next
/// failing call on the same thread.
#[no_mangle]
pub extern "C" fn msgen_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn msgen_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Parse and validate an experiment configuration.
///
/// # Safety
/// `json` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn msgen_experiment_from_json(
    json: *const c_char,
    out: *mut *mut MsgenExperiment,
) -> MsgenStatus {
    guard(|| {
        if out.is_null() {
            return Err(null_arg("out"));
        }
        let text = str_arg(json, "json")?;
        let cfg: ExperimentConfig = serde_json::from_str(text).map_err(Error::from)?;
        cfg.validate()?;
        *out = boxed(MsgenExperiment { cfg });
        Ok(())
    })
}

/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn msgen_experiment_load(
    path: *const c_char,
    out: *mut *mut MsgenExperiment,
) -> MsgenStatus {
    guard(|| {
        if out.is_null() {
            return Err(null_arg("out"));
        }
        let cfg = ExperimentConfig::load(&PathBuf::from(str_arg(path, "path")?))?;
        *out = boxed(MsgenExperiment { cfg });
        Ok(())
    })
}

/// # Safety
/// `exp` must come from this library.
#[no_mangle]
pub unsafe extern "C" fn msgen_experiment_set_seed(
    exp: *mut MsgenExperiment,
    seed: u64,
) -> MsgenStatus {
    guard(|| {
        let exp = exp.as_mut().ok_or_else(|| null_arg("exp"))?;
        exp.cfg.seed = seed;
        Ok(())
    })
}

/// # Safety
/// `exp` must come from this library; `dir` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn msgen_experiment_set_out(
    exp: *mut MsgenExperiment,
    dir: *const c_char,
) -> MsgenStatus {
    guard(|| {
        let exp = exp.as_mut().ok_or_else(|| null_arg("exp"))?;
        exp.cfg.out = PathBuf::from(str_arg(dir, "dir")?);
        Ok(())
    })
}

/// Number of evaluated treatment combinations.
///
/// # Safety
/// `exp` must come from this library and `out` be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn msgen_experiment_combo_count(
    exp: *const MsgenExperiment,
    out: *mut usize,
) -> MsgenStatus {
    guard(|| {
        let exp = exp.as_ref().ok_or_else(|| null_arg("exp"))?;
        let out = out.as_mut().ok_or_else(|| null_arg("out"))?;
        *out = exp.cfg.combos()?.len();
        Ok(())
    })
}

/// Run one stage against the artifacts already in the output directory.
///
/// # Safety
/// `exp` must come from this library.
#[no_mangle]
pub unsafe extern "C" fn msgen_experiment_run_stage(
    exp: *const MsgenExperiment,
    stage: MsgenStage,
) -> MsgenStatus {
    guard(|| {
        let exp = exp.as_ref().ok_or_else(|| null_arg("exp"))?;
        run_stage(stage.into(), &exp.cfg)?;
        Ok(())
    })
}

/// Run every stage and return the metrics.
///
/// # Safety
/// `exp` must come from this library and `out` be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn msgen_experiment_run(
    exp: *const MsgenExperiment,
    out: *mut *mut MsgenReport,
) -> MsgenStatus {
    guard(|| {
        let exp = exp.as_ref().ok_or_else(|| null_arg("exp"))?;
        if out.is_null() {
            return Err(null_arg("out"));
        }
        let report = run_pipeline(&exp.cfg)?;
        *out = boxed(MsgenReport { report });
        Ok(())
    })
}

/// # Safety
/// `exp` must come from this library or be NULL; it is invalid afterwards.
#[no_mangle]
pub unsafe extern "C" fn msgen_experiment_free(exp: *mut MsgenExperiment) {
    if !exp.is_null() {
        drop(Box::from_raw(exp));
    }
}

/// Read a `metrics.json` written by the evaluate stage.
///
/// # Safety
/// `path` must be NUL-terminated and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn msgen_report_load(
    path: *const c_char,
    out: *mut *mut MsgenReport,
) -> MsgenStatus {
    guard(|| {
        if out.is_null() {
            return Err(null_arg("out"));
        }
        let report = MetricsReport::read_json(&PathBuf::from(str_arg(path, "path")?))?;
        *out = boxed(MsgenReport { report });
        Ok(())
    })
}

/// Average and worst value of `metric` ("mean_dist", "w1" or "fid_star")
/// for `method`.
///
/// # Safety
/// Strings must be NUL-terminated; `avg` and `worst` valid pointers.
#[no_mangle]
pub unsafe extern "C" fn msgen_report_aggregate(
    report: *const MsgenReport,
    method: *const c_char,
    metric: *const c_char,
    avg: *mut f64,
    worst: *mut f64,
) -> MsgenStatus {
    guard(|| {
        let report = report.as_ref().ok_or_else(|| null_arg("report"))?;
        let (method, metric) = (str_arg(method, "method")?, str_arg(metric, "metric")?);
        let (avg, worst) = (
            avg.as_mut().ok_or_else(|| null_arg("avg"))?,
            worst.as_mut().ok_or_else(|| null_arg("worst"))?,
        );
        let a = report.report.aggregate(method, metric).ok_or_else(|| {
            Failure(
                MsgenStatus::InvalidArgument,
                format!("no {metric} aggregate for {method}"),
            )
        })?;
        *avg = a.avg;
        *worst = a.worst;
        Ok(())
    })
}

/// The report as JSON; release the string with [`msgen_string_free`].
///
/// # Safety
/// `report` must come from this library and `out` be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn msgen_report_to_json(
    report: *const MsgenReport,
    out: *mut *mut c_char,
) -> MsgenStatus {
    guard(|| {
        let report = report.as_ref().ok_or_else(|| null_arg("report"))?;
        if out.is_null() {
            return Err(null_arg("out"));
        }
        let text = serde_json::to_string(&report.report).map_err(Error::from)?;
        *out = CString::new(text)
            .map_err(|e| Failure(MsgenStatus::Io, e.to_string()))?
            .into_raw();
        Ok(())
    })
}

/// # Safety
/// `report` must come from this library or be NULL.
#[no_mangle]
pub unsafe extern "C" fn msgen_report_free(report: *mut MsgenReport) {
    if !report.is_null() {
        drop(Box::from_raw(report));
    }
}

/// # Safety
/// `s` must come from this library or be NULL.
#[no_mangle]
pub unsafe extern "C" fn msgen_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Load a trained method from `models/<label>.json`.
///
/// # Safety
/// `path` must be NUL-terminated and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn msgen_model_load(
    path: *const c_char,
    out: *mut *mut MsgenModel,
) -> MsgenStatus {
    guard(|| {
        if out.is_null() {
            return Err(null_arg("out"));
        }
        let method = TrainedMethod::load(&PathBuf::from(str_arg(path, "path")?))?;
        *out = boxed(MsgenModel { method });
        Ok(())
    })
}

/// Treatment-window length `d`.
///
/// # Safety
/// `model` must come from this library or be NULL.
#[no_mangle]
pub unsafe extern "C" fn msgen_model_history_len(model: *const MsgenModel) -> usize {
    model.as_ref().map_or(0, |m| m.method.history_len())
}

/// Outcome dimension `m`.
///
/// # Safety
/// `model` must come from this library or be NULL.
#[no_mangle]
pub unsafe extern "C" fn msgen_model_outcome_dim(model: *const MsgenModel) -> usize {
    model.as_ref().map_or(0, |m| m.method.outcome_dim())
}

/// Draw `n` outcomes for the treatment window `a_bar` (oldest first, 0/1
/// entries) into `out`, row-major `n × m`. `out_len` must be at least `n·m`.
///
/// # Safety
/// `a_bar` must hold `d` bytes and `out` `out_len` doubles.
#[no_mangle]
pub unsafe extern "C" fn msgen_model_sample(
    model: *const MsgenModel,
    a_bar: *const u8,
    d: usize,
    n: usize,
    seed: u64,
    out: *mut f64,
    out_len: usize,
) -> MsgenStatus {
    guard(|| {
        let model = model.as_ref().ok_or_else(|| null_arg("model"))?;
        let a_bar = slice_arg(a_bar, d, "a_bar")?;
        let m = model.method.outcome_dim();
        let needed = n.checked_mul(m).ok_or(Failure(
            MsgenStatus::InvalidArgument,
            "n·m overflows".to_string(),
        ))?;
        if out_len < needed {
            return Err(Failure(
                MsgenStatus::InvalidArgument,
                format!("out holds {out_len} values, need {needed}"),
            ));
        }
        if needed == 0 {
            return Ok(());
        }
        if out.is_null() {
            return Err(null_arg("out"));
        }
        let draws = model.method.sample(a_bar, None, n, seed)?;
        let dest = std::slice::from_raw_parts_mut(out, needed);
        for (row, y) in dest.chunks_mut(m).zip(&draws) {
            row.copy_from_slice(y);
        }
        Ok(())
    })
}

/// # Safety
/// `model` must come from this library or be NULL.
#[no_mangle]
pub unsafe extern "C" fn msgen_model_free(model: *mut MsgenModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// 1-Wasserstein distance between two empirical samples on the line.
///
/// # Safety
/// `a` and `b` must hold `na` and `nb` doubles; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn msgen_wasserstein1(
    a: *const f64,
    na: usize,
    b: *const f64,
    nb: usize,
    out: *mut f64,
) -> MsgenStatus {
    guard(|| {
        let (a, b) = (slice_arg(a, na, "a")?, slice_arg(b, nb, "b")?);
        let out = out.as_mut().ok_or_else(|| null_arg("out"))?;
        *out = wasserstein1(a, b)?;
        Ok(())
    })
}
