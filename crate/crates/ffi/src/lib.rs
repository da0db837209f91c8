//! C ABI over the overlap-sde toolkit.
//!
//! Objects cross the boundary as opaque heap handles created by `*_new` or
//! `*_compute` functions and released by the matching `*_free`. Every entry
//! point returns an [`OsdStatus`]; on failure the message is available from
//! [`osd_last_error`] on the same thread. Panics never unwind into C.
//!
//! Array getters follow one convention: `len` receives the required length,
//! `buf` may be null when `cap` is 0, and a short buffer is an
//! `InvalidArgument` error with nothing written.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use overlap_sde::averaging::AveragedCoeffs;
use overlap_sde::grid::DomainGrid;
use overlap_sde::harness::{coefficients_at, DriveRegime, Ensemble, RunConfig, Target};
use overlap_sde::models::ModelKind;
use overlap_sde::spectral::{CoupledOperator, EigenSystem};
use overlap_sde::Error;

/// Result of every call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OsdStatus {
    Ok = 0,
    InvalidArgument = 1,
    Config = 2,
    Numerical = 3,
    NullPointer = 4,
    Panic = 5,
    Io = 6,
}

/// Which solver `osd_simulate_member` runs.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OsdTarget {
    Reference = 0,
    ConventionalFd = 1,
    GammaReduced = 2,
    Holistic = 3,
    HolisticIntroVariant = 4,
}

/// Raw `OsdTarget` values arrive as integers so a bad value is an error, not UB.
fn target_from_raw(raw: u32) -> Result<Target, Failure> {
    Ok(match raw {
        x if x == OsdTarget::Reference as u32 => Target::Reference,
        x if x == OsdTarget::ConventionalFd as u32 => Target::Model(ModelKind::ConventionalFd),
        x if x == OsdTarget::GammaReduced as u32 => Target::Model(ModelKind::GammaReduced),
        x if x == OsdTarget::Holistic as u32 => Target::Model(ModelKind::Holistic),
        x if x == OsdTarget::HolisticIntroVariant as u32 => Target::Model(ModelKind::HolisticIntroVariant),
        other => return Err(invalid(format!("unknown target {other}"))),
    })
}

/// Opaque element grid.
pub struct OsdGrid(DomainGrid);

/// Opaque run configuration.
pub struct OsdConfig(RunConfig);

/// Opaque lowest eigenpairs of a coupled operator.
pub struct OsdEigen(EigenSystem);

/// Opaque averaged model coefficients.
pub struct OsdCoeffs(AveragedCoeffs);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).unwrap_or_default());
}

/// Failure carried to the boundary.
struct Failure(OsdStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Config(_) | Error::Sweep(_) => OsdStatus::Config,
            Error::Io(_) => OsdStatus::Io,
            e if e.is_numerical() => OsdStatus::Numerical,
            _ => OsdStatus::InvalidArgument,
        };
        Failure(status, e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(OsdStatus::NullPointer, format!("{what} is null"))
}

fn invalid(msg: impl Into<String>) -> Failure {
    Failure(OsdStatus::InvalidArgument, msg.into())
}

/// Runs `f`, converting errors and panics into a status and a thread-local message.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> OsdStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            OsdStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            OsdStatus::Panic
        }
    }
}

/// # Safety
/// `p` must be null or point to a live `T` created by this library.
unsafe fn borrow<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(what))
}

/// # Safety
/// `out` must be null or valid for one write.
unsafe fn emit<T>(out: *mut *mut T, value: T) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null("out"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

/// # Safety
/// `buf` must be valid for `cap` writes unless `cap` is 0; `len` must be
/// null or valid for one write.
unsafe fn copy_out(values: &[f64], buf: *mut f64, cap: usize, len: *mut usize) -> Result<(), Failure> {
    if len.is_null() {
        return Err(null("len"));
    }
    *len = values.len();
    if cap == 0 && buf.is_null() {
        return Ok(());
    }
    if buf.is_null() {
        return Err(null("buf"));
    }
    if cap < values.len() {
        return Err(invalid(format!("buffer holds {cap} values, need {}", values.len())));
    }
    ptr::copy_nonoverlapping(values.as_ptr(), buf, values.len());
    Ok(())
}

/// Message of the last failed call on this thread; empty after a success.
/// Valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn osd_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn osd_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// # Safety
/// `out` must be valid for one write.
#[no_mangle]
pub unsafe extern "C" fn osd_grid_new(
    length: f64,
    elements: usize,
    subgrid: usize,
    out: *mut *mut OsdGrid,
) -> OsdStatus {
    guard(|| emit(out, OsdGrid(DomainGrid::new(length, elements, subgrid)?)))
}

/// # Safety
/// `grid` must come from `osd_grid_new` and not be used afterwards; null is ignored.
#[no_mangle]
pub unsafe extern "C" fn osd_grid_free(grid: *mut OsdGrid) {
    if !grid.is_null() {
        drop(Box::from_raw(grid));
    }
}

/// # Safety
/// `grid` must be a live handle; `out` valid for one write.
#[no_mangle]
pub unsafe extern "C" fn osd_grid_spacing(grid: *const OsdGrid, out: *mut f64) -> OsdStatus {
    guard(|| {
        let g = borrow(grid, "grid")?;
        *out.as_mut().ok_or_else(|| null("out"))? = g.0.spacing();
        Ok(())
    })
}

/// Lowest `count` eigenpairs of the coupled operator at coupling `gamma`.
///
/// # Safety
/// `grid` must be a live handle; `out` valid for one write.
#[no_mangle]
pub unsafe extern "C" fn osd_eigen_solve(
    grid: *const OsdGrid,
    gamma: f64,
    count: usize,
    out: *mut *mut OsdEigen,
) -> OsdStatus {
    guard(|| {
        let g = borrow(grid, "grid")?;
        let op = CoupledOperator::assemble(&g.0, gamma)?;
        emit(out, OsdEigen(EigenSystem::solve(&op, count)?))
    })
}

/// # Safety
/// `eig` must be a live handle; `buf`, `cap`, `len` as in the module docs.
#[no_mangle]
pub unsafe extern "C" fn osd_eigen_values(
    eig: *const OsdEigen,
    buf: *mut f64,
    cap: usize,
    len: *mut usize,
) -> OsdStatus {
    guard(|| copy_out(borrow(eig, "eig")?.0.values(), buf, cap, len))
}

/// Mean of the slow cluster, the ground rate `λ₀(γ)`.
///
/// # Safety
/// `eig` must be a live handle; `out` valid for one write.
#[no_mangle]
pub unsafe extern "C" fn osd_eigen_slow_rate(eig: *const OsdEigen, out: *mut f64) -> OsdStatus {
    guard(|| {
        let rate = borrow(eig, "eig")?.0.slow_rate()?;
        *out.as_mut().ok_or_else(|| null("out"))? = rate;
        Ok(())
    })
}

/// # Safety
/// `eig` must come from `osd_eigen_solve`; null is ignored.
#[no_mangle]
pub unsafe extern "C" fn osd_eigen_free(eig: *mut OsdEigen) {
    if !eig.is_null() {
        drop(Box::from_raw(eig));
    }
}

/// # Safety
/// `out` must be valid for one write.
#[no_mangle]
pub unsafe extern "C" fn osd_config_default(out: *mut *mut OsdConfig) -> OsdStatus {
    guard(|| emit(out, OsdConfig(RunConfig::default())))
}

/// Parses and validates TOML text.
///
/// # Safety
/// `toml` must be a NUL-terminated UTF-8 string; `out` valid for one write.
#[no_mangle]
pub unsafe extern "C" fn osd_config_from_toml(toml: *const c_char, out: *mut *mut OsdConfig) -> OsdStatus {
    guard(|| {
        if toml.is_null() {
            return Err(null("toml"));
        }
        let text = CStr::from_ptr(toml)
            .to_str()
            .map_err(|e| invalid(format!("config is not UTF-8: {e}")))?;
        emit(out, OsdConfig(RunConfig::from_toml(text)?))
    })
}

/// # Safety
/// `cfg` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn osd_config_set_seed(cfg: *mut OsdConfig, seed: u64) -> OsdStatus {
    guard(|| {
        cfg.as_mut().ok_or_else(|| null("cfg"))?.0.ensemble.seed = seed;
        Ok(())
    })
}

/// # Safety
/// `cfg` must come from this library; null is ignored.
#[no_mangle]
pub unsafe extern "C" fn osd_config_free(cfg: *mut OsdConfig) {
    if !cfg.is_null() {
        drop(Box::from_raw(cfg));
    }
}

/// Averaged coefficients at the configured grid, from the projected noise.
///
/// # Safety
/// `cfg` must be a live handle; `out` valid for one write.
#[no_mangle]
pub unsafe extern "C" fn osd_coeffs_compute(cfg: *const OsdConfig, out: *mut *mut OsdCoeffs) -> OsdStatus {
    guard(|| {
        let c = &borrow(cfg, "cfg")?.0;
        emit(out, OsdCoeffs(coefficients_at(c, c.spacing(), DriveRegime::Projected)?))
    })
}

/// Effective linear rates `α̂_j`, one per element.
///
/// # Safety
/// `coeffs` must be a live handle; `buf`, `cap`, `len` as in the module docs.
#[no_mangle]
pub unsafe extern "C" fn osd_coeffs_hat_alpha(
    coeffs: *const OsdCoeffs,
    buf: *mut f64,
    cap: usize,
    len: *mut usize,
) -> OsdStatus {
    guard(|| copy_out(&borrow(coeffs, "coeffs")?.0.hat_alpha, buf, cap, len))
}

/// Deviation variances `Q_j`, one per element.
///
/// # Safety
/// `coeffs` must be a live handle; `buf`, `cap`, `len` as in the module docs.
#[no_mangle]
pub unsafe extern "C" fn osd_coeffs_deviation(
    coeffs: *const OsdCoeffs,
    buf: *mut f64,
    cap: usize,
    len: *mut usize,
) -> OsdStatus {
    guard(|| copy_out(&borrow(coeffs, "coeffs")?.0.deviation, buf, cap, len))
}

/// # Safety
/// `coeffs` must come from `osd_coeffs_compute`; null is ignored.
#[no_mangle]
pub unsafe extern "C" fn osd_coeffs_free(coeffs: *mut OsdCoeffs) {
    if !coeffs.is_null() {
        drop(Box::from_raw(coeffs));
    }
}

/// Grid values at the horizon for one ensemble member of `target` (an
/// `OsdTarget` value), bitwise equal to the same member of a full ensemble run.
///
/// # Safety
/// `cfg` must be a live handle; `buf`, `cap`, `len` as in the module docs.
#[no_mangle]
pub unsafe extern "C" fn osd_simulate_member(
    cfg: *const OsdConfig,
    target: u32,
    member: usize,
    buf: *mut f64,
    cap: usize,
    len: *mut usize,
) -> OsdStatus {
    guard(|| {
        let c = borrow(cfg, "cfg")?.0.clone();
        let target = target_from_raw(target)?;
        let ens = Ensemble::new(c, vec![target])?;
        let rec = ens.run_member(member)?;
        let values = rec[0].grid_values(&ens.setup().grid);
        copy_out(&values, buf, cap, len)
    })
}
