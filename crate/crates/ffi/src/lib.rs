//! C interface to osqm.
//!
//! Every object crosses the boundary as an opaque pointer created by an
//! `osqm_*_new`/`osqm_*_from_*` function and released with the matching
//! `osqm_*_free`. Fallible calls return an [`OsqmStatus`]; the message of the
//! last failure on the calling thread is available from [`osqm_last_error`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use osqm::coarse::{build_partition, quasiprojector_defect, BoxSpec, Partition};
use osqm::config::parse_config_str;
use osqm::scenario::{run_scenario, RunOptions};
use osqm::transition::transition_probabilities;
use osqm::wigner::{coherent_state, wigner_from_wavefunction, WignerState};
use osqm::{Error, PhaseGrid};

/// Result of a fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OsqmStatus {
    Ok = 0,
    NullPointer = 1,
    /// Bad input or violated precondition.
    Invalid = 2,
    /// Numerical abort.
    Numerical = 3,
    Io = 4,
    BufferTooSmall = 5,
    Panic = 6,
}

pub struct OsqmGrid(PhaseGrid);
pub struct OsqmWigner(WignerState);
pub struct OsqmPartition(Partition);

/// A parsed scenario and, after a run, its final-region frequencies.
pub struct OsqmScenario {
    config: osqm::config::ScenarioConfig,
    frequencies: Vec<f64>,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> OsqmStatus {
    match e {
        Error::Io(_) => OsqmStatus::Io,
        e if e.is_numerical() => OsqmStatus::Numerical,
        _ => OsqmStatus::Invalid,
    }
}

/// Run `f`, recording any error or panic.
fn guard<F: FnOnce() -> Result<(), OsqmStatus>>(f: F) -> OsqmStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => OsqmStatus::Ok,
        Ok(Err(s)) => s,
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            OsqmStatus::Panic
        }
    }
}

fn fail(e: Error) -> OsqmStatus {
    let s = status_of(&e);
    set_error(e.to_string());
    s
}

fn null(what: &str) -> OsqmStatus {
    set_error(format!("{what} is null"));
    OsqmStatus::NullPointer
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, OsqmStatus> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p).to_str().map_err(|_| {
        set_error(format!("{what} is not valid UTF-8"));
        OsqmStatus::Invalid
    })
}

unsafe fn obj<'a, T>(p: *const T, what: &str) -> Result<&'a T, OsqmStatus> {
    p.as_ref().ok_or_else(|| null(what))
}

fn store<T>(out: *mut *mut T, value: T) -> Result<(), OsqmStatus> {
    if out.is_null() {
        return Err(null("output pointer"));
    }
    // SAFETY: checked non-null; the caller provides writable storage for one pointer.
    unsafe { *out = Box::into_raw(Box::new(value)) };
    Ok(())
}

unsafe fn copy_out(values: &[f64], buf: *mut f64, len: usize) -> Result<(), OsqmStatus> {
    if len < values.len() {
        set_error(format!("buffer holds {len} values, {} needed", values.len()));
        return Err(OsqmStatus::BufferTooSmall);
    }
    if buf.is_null() {
        return Err(null("buffer"));
    }
    ptr::copy_nonoverlapping(values.as_ptr(), buf, values.len());
    Ok(())
}

/// Message of the last failed call on this thread; valid until the next failing call.
#[no_mangle]
pub extern "C" fn osqm_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn osqm_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Phase-space grid with `points` per axis; `p_extent` follows from `dx dp N = 2 pi hbar`.
#[no_mangle]
pub extern "C" fn osqm_grid_new(dof: usize, points: usize, x_extent: f64, hbar: f64, out: *mut *mut OsqmGrid) -> OsqmStatus {
    guard(|| {
        let g = PhaseGrid::new(dof, points, x_extent, hbar).map_err(fail)?;
        store(out, OsqmGrid(g))
    })
}

/// # Safety
/// `grid` must come from [`osqm_grid_new`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn osqm_grid_free(grid: *mut OsqmGrid) {
    if !grid.is_null() {
        drop(Box::from_raw(grid));
    }
}

/// Number of phase-space samples, `N^(2 dof)`; 0 for a null grid.
///
/// # Safety
/// `grid` must be null or a live grid handle.
#[no_mangle]
pub unsafe extern "C" fn osqm_grid_len(grid: *const OsqmGrid) -> usize {
    grid.as_ref().map(|g| g.0.dim() * g.0.dim()).unwrap_or(0)
}

/// Wigner function of the coherent state centred at `(x[i], p[i])`, `i < dof`.
///
/// # Safety
/// `grid` must be live; `x` and `p` must each point to `dof` doubles.
#[no_mangle]
pub unsafe extern "C" fn osqm_wigner_coherent(
    grid: *const OsqmGrid,
    x: *const f64,
    p: *const f64,
    out: *mut *mut OsqmWigner,
) -> OsqmStatus {
    guard(|| {
        let g = obj(grid, "grid")?;
        if x.is_null() || p.is_null() {
            return Err(null("centre"));
        }
        let n = g.0.dof();
        let (xs, ps) = (std::slice::from_raw_parts(x, n), std::slice::from_raw_parts(p, n));
        let psi = coherent_state(xs, ps, &g.0).map_err(fail)?;
        store(out, OsqmWigner(wigner_from_wavefunction(&psi).map_err(fail)?))
    })
}

/// # Safety
/// `w` must be null or a live Wigner handle, not used afterwards.
#[no_mangle]
pub unsafe extern "C" fn osqm_wigner_free(w: *mut OsqmWigner) {
    if !w.is_null() {
        drop(Box::from_raw(w));
    }
}

/// Phase-space integral of `w` (1 for a normalized state); NaN for a null handle.
///
/// # Safety
/// `w` must be null or a live Wigner handle.
#[no_mangle]
pub unsafe extern "C" fn osqm_wigner_integral(w: *const OsqmWigner) -> f64 {
    w.as_ref().map(|w| w.0.integral()).unwrap_or(f64::NAN)
}

/// Copy the row-major Wigner values into `buf` of capacity `len`.
///
/// # Safety
/// `w` must be live and `buf` must point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn osqm_wigner_values(w: *const OsqmWigner, buf: *mut f64, len: usize) -> OsqmStatus {
    guard(|| {
        let w = obj(w, "wigner")?;
        let v: Vec<f64> = w.0.values().iter().copied().collect();
        copy_out(&v, buf, len)
    })
}

/// Write the binary grid dump of `w` to `path`.
///
/// # Safety
/// `w` must be live; `path` must be a NUL-terminated UTF-8 string.
#[no_mangle]
pub unsafe extern "C" fn osqm_wigner_write(w: *const OsqmWigner, path: *const c_char) -> OsqmStatus {
    guard(|| {
        let w = obj(w, "wigner")?;
        let path = str_arg(path, "path")?;
        osqm::io::write_wigner(&PathBuf::from(path), &w.0).map_err(fail)
    })
}

/// Two regions split at `x` along the first position axis.
///
/// # Safety
/// `grid` must be live.
#[no_mangle]
pub unsafe extern "C" fn osqm_partition_half_planes(grid: *const OsqmGrid, x: f64, out: *mut *mut OsqmPartition) -> OsqmStatus {
    guard(|| {
        let g = obj(grid, "grid")?;
        let p = build_partition(&g.0, &BoxSpec::half_planes(g.0.dof(), x)).map_err(fail)?;
        store(out, OsqmPartition(p))
    })
}

/// # Safety
/// `p` must be null or a live partition handle, not used afterwards.
#[no_mangle]
pub unsafe extern "C" fn osqm_partition_free(p: *mut OsqmPartition) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

/// Number of regions; 0 for a null handle.
///
/// # Safety
/// `p` must be null or a live partition handle.
#[no_mangle]
pub unsafe extern "C" fn osqm_partition_len(p: *const OsqmPartition) -> usize {
    p.as_ref().map(|p| p.0.len()).unwrap_or(0)
}

/// Relative trace-norm defect of the quasiprojectors.
///
/// # Safety
/// `p` must be live and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn osqm_partition_defect(p: *const OsqmPartition, out: *mut f64) -> OsqmStatus {
    guard(|| {
        let p = obj(p, "partition")?;
        copy_out(&[quasiprojector_defect(&p.0).defect], out, 1)
    })
}

/// Region probabilities of `w`, one per region.
///
/// # Safety
/// `p` and `w` must be live; `buf` must point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn osqm_partition_probabilities(
    p: *const OsqmPartition,
    w: *const OsqmWigner,
    buf: *mut f64,
    len: usize,
) -> OsqmStatus {
    guard(|| {
        let (p, w) = (obj(p, "partition")?, obj(w, "wigner")?);
        let probs = transition_probabilities(&w.0, &p.0).map_err(fail)?;
        copy_out(&probs, buf, len)
    })
}

/// Parse and validate a JSON scenario document.
///
/// # Safety
/// `json` must be a NUL-terminated UTF-8 string.
#[no_mangle]
pub unsafe extern "C" fn osqm_scenario_from_json(json: *const c_char, out: *mut *mut OsqmScenario) -> OsqmStatus {
    guard(|| {
        let text = str_arg(json, "json")?;
        let config = parse_config_str(text).map_err(fail)?;
        store(out, OsqmScenario { config, frequencies: Vec::new() })
    })
}

/// # Safety
/// `s` must be null or a live scenario handle, not used afterwards.
#[no_mangle]
pub unsafe extern "C" fn osqm_scenario_free(s: *mut OsqmScenario) {
    if !s.is_null() {
        drop(Box::from_raw(s));
    }
}

/// Run the ensemble and write outputs into `out_dir` (the config's directory when null).
/// A negative `seed` keeps the config's base seed.
///
/// # Safety
/// `s` must be live; `out_dir` must be null or a NUL-terminated UTF-8 string.
#[no_mangle]
pub unsafe extern "C" fn osqm_scenario_run(s: *mut OsqmScenario, out_dir: *const c_char, seed: i64) -> OsqmStatus {
    guard(|| {
        let s = s.as_mut().ok_or_else(|| null("scenario"))?;
        let dir = if out_dir.is_null() { None } else { Some(PathBuf::from(str_arg(out_dir, "out_dir")?)) };
        let opts = RunOptions { seed: u64::try_from(seed).ok(), out_dir: dir, ..Default::default() };
        let summary = run_scenario(&s.config, &opts).map_err(fail)?;
        s.frequencies = summary.ensemble.frequencies;
        Ok(())
    })
}

/// Number of regions reported by the last run; 0 before any run.
///
/// # Safety
/// `s` must be null or a live scenario handle.
#[no_mangle]
pub unsafe extern "C" fn osqm_scenario_region_count(s: *const OsqmScenario) -> usize {
    s.as_ref().map(|s| s.frequencies.len()).unwrap_or(0)
}

/// Final-region frequencies of the last run.
///
/// # Safety
/// `s` must be live; `buf` must point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn osqm_scenario_frequencies(s: *const OsqmScenario, buf: *mut f64, len: usize) -> OsqmStatus {
    guard(|| {
        let s = obj(s, "scenario")?;
        copy_out(&s.frequencies, buf, len)
    })
}
