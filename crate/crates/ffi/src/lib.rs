//! C ABI over the semcluster library.
//!
//! Every function returns an [`SmcStatus`] (or a plain value for total
//! functions). On failure a message is kept per thread and can be read with
//! [`smc_last_error_message`]. Objects crossing the boundary are opaque
//! handles released with their matching `_free` function.

use std::cell::RefCell;
use std::collections::BTreeMap;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::ptr;

use semcluster::analytics::{bias_intensity, spurious_correlation, JointDistribution};
use semcluster::metrics::{clustering_accuracy, harmonic_mean};
use semcluster::parse::parse_bulleted_list;
use semcluster::pipeline::{AnalysisKind, PipelineConfig, PipelineError, Run};
use semcluster::types::{Distribution, Granularity, Substructure};

/// Result codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SmcStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    InvalidArgument = 3,
    Config = 4,
    Backend = 5,
    Stage = 6,
    Io = 7,
    Panic = 8,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).unwrap_or_default());
}

fn fail(status: SmcStatus, msg: impl Into<String>) -> SmcStatus {
    set_error(msg);
    status
}

fn guard(f: impl FnOnce() -> SmcStatus) -> SmcStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(_) => fail(SmcStatus::Panic, "internal panic"),
    }
}

fn pipeline_status(e: &PipelineError) -> SmcStatus {
    match e {
        PipelineError::Io { .. } => SmcStatus::Io,
        PipelineError::Backend(_) => SmcStatus::Backend,
        _ if e.exit_code() == 2 => SmcStatus::Config,
        _ => SmcStatus::Stage,
    }
}

unsafe fn read_str<'a>(p: *const c_char) -> Result<&'a str, SmcStatus> {
    if p.is_null() {
        return Err(fail(SmcStatus::NullArgument, "null string argument"));
    }
    CStr::from_ptr(p).to_str().map_err(|_| fail(SmcStatus::InvalidUtf8, "string argument is not UTF-8"))
}

unsafe fn read_strs<'a>(p: *const *const c_char, len: usize) -> Result<Vec<&'a str>, SmcStatus> {
    if p.is_null() {
        return Err(fail(SmcStatus::NullArgument, "null array argument"));
    }
    std::slice::from_raw_parts(p, len).iter().map(|&s| read_str(s)).collect()
}

/// Message for the last failed call on this thread. Empty when none. The
/// pointer stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn smc_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version, statically allocated.
#[no_mangle]
pub extern "C" fn smc_version() -> *const c_char {
    static V: &str = concat!(env!("CARGO_PKG_VERSION"), "\0");
    V.as_ptr().cast()
}

/// Normalized-entropy bias of `len` cluster counts.
///
/// # Safety
/// `counts` points to `len` readable values; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn smc_bias_intensity(counts: *const u64, len: usize, out: *mut f64) -> SmcStatus {
    guard(|| {
        if counts.is_null() || out.is_null() {
            return fail(SmcStatus::NullArgument, "null argument");
        }
        let map: BTreeMap<String, u64> =
            std::slice::from_raw_parts(counts, len).iter().enumerate().map(|(i, &c)| (format!("{i:08}"), c)).collect();
        let dist = match Distribution::from_counts("ffi", Granularity::Mid, map) {
            Ok(d) => d,
            Err(e) => return fail(SmcStatus::InvalidArgument, e.to_string()),
        };
        match bias_intensity(&dist) {
            Ok(s) => {
                *out = s.value;
                SmcStatus::Ok
            }
            Err(e) => fail(SmcStatus::InvalidArgument, e.to_string()),
        }
    })
}

/// Normalized mutual information of a row-major `rows` x `cols` count table.
///
/// # Safety
/// `table` points to `rows * cols` readable values; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn smc_spurious_correlation(
    table: *const u64,
    rows: usize,
    cols: usize,
    out: *mut f64,
) -> SmcStatus {
    guard(|| {
        if table.is_null() || out.is_null() {
            return fail(SmcStatus::NullArgument, "null argument");
        }
        let Some(len) = rows.checked_mul(cols) else {
            return fail(SmcStatus::InvalidArgument, "table size overflows");
        };
        let cells = std::slice::from_raw_parts(table, len);
        let mut counts = BTreeMap::new();
        for r in 0..rows {
            for c in 0..cols {
                counts.insert((format!("{r:08}"), format!("{c:08}")), cells[r * cols + c]);
            }
        }
        let result = JointDistribution::from_counts(counts).and_then(|j| spurious_correlation(&j));
        match result {
            Ok(v) => {
                *out = v;
                SmcStatus::Ok
            }
            Err(e) => fail(SmcStatus::InvalidArgument, e.to_string()),
        }
    })
}

/// Clustering accuracy of `n` predicted cluster names against `n` labels,
/// paired by position.
///
/// # Safety
/// `predicted` and `labels` point to `n` NUL-terminated strings; `out` is
/// writable.
#[no_mangle]
pub unsafe extern "C" fn smc_clustering_accuracy(
    predicted: *const *const c_char,
    labels: *const *const c_char,
    n: usize,
    out: *mut f64,
) -> SmcStatus {
    guard(|| {
        if out.is_null() {
            return fail(SmcStatus::NullArgument, "null output");
        }
        let (pred, gt) = match (read_strs(predicted, n), read_strs(labels, n)) {
            (Ok(p), Ok(g)) => (p, g),
            (Err(s), _) | (_, Err(s)) => return s,
        };
        let ids: Vec<String> = (0..n).map(|i| format!("{i:08}")).collect();
        let sub = Substructure::from_assignments("ffi", Granularity::Mid, ids.iter().map(String::as_str).zip(pred));
        let gt: BTreeMap<String, String> = ids.iter().cloned().zip(gt.iter().map(|s| s.to_string())).collect();
        match clustering_accuracy(&sub, &gt) {
            Ok(v) => {
                *out = v;
                SmcStatus::Ok
            }
            Err(e) => fail(SmcStatus::InvalidArgument, e.to_string()),
        }
    })
}

/// `2ab / (a + b)`, zero when both are zero.
#[no_mangle]
pub extern "C" fn smc_harmonic_mean(a: f64, b: f64) -> f64 {
    harmonic_mean(a, b)
}

/// Owned list of strings.
pub struct SmcStringList {
    items: Vec<CString>,
}

/// Parses a bulleted or numbered model response into a list.
///
/// # Safety
/// `text` is NUL-terminated; `out` is writable. Free the result with
/// [`smc_string_list_free`].
#[no_mangle]
pub unsafe extern "C" fn smc_parse_bullets(text: *const c_char, out: *mut *mut SmcStringList) -> SmcStatus {
    guard(|| {
        if out.is_null() {
            return fail(SmcStatus::NullArgument, "null output");
        }
        *out = ptr::null_mut();
        let text = match read_str(text) {
            Ok(t) => t,
            Err(s) => return s,
        };
        match parse_bulleted_list(text) {
            Ok(items) => {
                let items = items.into_iter().map(|s| CString::new(s.replace('\0', " ")).unwrap_or_default()).collect();
                *out = Box::into_raw(Box::new(SmcStringList { items }));
                SmcStatus::Ok
            }
            Err(e) => fail(SmcStatus::InvalidArgument, e.to_string()),
        }
    })
}

/// # Safety
/// `list` is null or a live list.
#[no_mangle]
pub unsafe extern "C" fn smc_string_list_len(list: *const SmcStringList) -> usize {
    list.as_ref().map_or(0, |l| l.items.len())
}

/// Borrowed item `index`, or null when out of range. Valid until the list
/// is freed.
///
/// # Safety
/// `list` is null or a live list.
#[no_mangle]
pub unsafe extern "C" fn smc_string_list_get(list: *const SmcStringList, index: usize) -> *const c_char {
    list.as_ref().and_then(|l| l.items.get(index)).map_or(ptr::null(), |s| s.as_ptr())
}

/// # Safety
/// `list` is null or a list not yet freed.
#[no_mangle]
pub unsafe extern "C" fn smc_string_list_free(list: *mut SmcStringList) {
    if !list.is_null() {
        drop(Box::from_raw(list));
    }
}

/// An open pipeline run.
pub struct SmcPipeline {
    run: Run,
    run_dir: CString,
}

/// Opens a run from a configuration file. `run_id` may be null.
///
/// # Safety
/// String arguments are NUL-terminated; `out` is writable. Free the result
/// with [`smc_pipeline_free`].
#[no_mangle]
pub unsafe extern "C" fn smc_pipeline_open(
    config_path: *const c_char,
    run_id: *const c_char,
    offline: bool,
    out: *mut *mut SmcPipeline,
) -> SmcStatus {
    guard(|| {
        if out.is_null() {
            return fail(SmcStatus::NullArgument, "null output");
        }
        *out = ptr::null_mut();
        let path = match read_str(config_path) {
            Ok(p) => PathBuf::from(p),
            Err(s) => return s,
        };
        let run_id = if run_id.is_null() {
            None
        } else {
            match read_str(run_id) {
                Ok(r) => Some(r.to_string()),
                Err(s) => return s,
            }
        };
        let base = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new(".")).to_path_buf();
        let opened = PipelineConfig::load(&path).and_then(|cfg| Run::open(cfg, &base, run_id, offline, None));
        match opened {
            Ok(run) => {
                let run_dir = CString::new(run.run_dir.to_string_lossy().into_owned()).unwrap_or_default();
                *out = Box::into_raw(Box::new(SmcPipeline { run, run_dir }));
                SmcStatus::Ok
            }
            Err(e) => fail(pipeline_status(&e), e.to_string()),
        }
    })
}

/// Runs one stage by name: `caption`, `propose`, `group`, `evaluate`,
/// `bias`, `popularity`, `report` or `all`.
///
/// # Safety
/// `pipeline` is a live handle; `stage` is NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn smc_pipeline_run_stage(pipeline: *mut SmcPipeline, stage: *const c_char) -> SmcStatus {
    guard(|| {
        let Some(p) = pipeline.as_mut() else {
            return fail(SmcStatus::NullArgument, "null pipeline");
        };
        let stage = match read_str(stage) {
            Ok(s) => s,
            Err(s) => return s,
        };
        let run = &mut p.run;
        let result = match stage {
            "caption" => run.caption().map(|r| vec![r]),
            "propose" => run.propose().map(|r| vec![r]),
            "group" => run.group(None).map(|r| vec![r]),
            "evaluate" => run.evaluate(None).map(|r| vec![r]),
            "bias" => run.analyze(AnalysisKind::Bias, None, None).map(|r| vec![r]),
            "popularity" => run.analyze(AnalysisKind::Popularity, None, None).map(|r| vec![r]),
            "report" => run.report().map(|r| vec![r]),
            "all" => run.run_all(),
            other => return fail(SmcStatus::InvalidArgument, format!("unknown stage `{other}`")),
        };
        match result {
            Ok(records) => match records.iter().find(|r| !r.errors.is_empty()) {
                Some(r) => fail(SmcStatus::Stage, r.errors.join("; ")),
                None => SmcStatus::Ok,
            },
            Err(e) => fail(pipeline_status(&e), e.to_string()),
        }
    })
}

/// Run directory of the handle, borrowed until it is freed.
///
/// # Safety
/// `pipeline` is null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn smc_pipeline_run_dir(pipeline: *const SmcPipeline) -> *const c_char {
    pipeline.as_ref().map_or(ptr::null(), |p| p.run_dir.as_ptr())
}

/// Releases the handle and its directory lock.
///
/// # Safety
/// `pipeline` is null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn smc_pipeline_free(pipeline: *mut SmcPipeline) {
    if !pipeline.is_null() {
        drop(Box::from_raw(pipeline));
    }
}
