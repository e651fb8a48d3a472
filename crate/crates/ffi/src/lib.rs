//! C ABI over `scbf`.
//!
//! Every fallible function returns a [`ScbfStatus`]; on failure the message
//! is available from [`scbf_last_error_message`] on the same thread.
//! Objects are opaque handles created by `*_new`/`*_from_*` functions and
//! released with the matching `*_free`. Passing a null handle to `*_free`
//! is a no-op.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::sync::Arc;

use scbf::averaging::{solve_averaged, DriftMode};
use scbf::sde::{simulate_slow_fast, ModelParams, SimOptions, Trajectory};
use scbf::{BasisSet, Error, SpectralField};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScbfStatus {
    Ok = 0,
    InvalidArgument = 1,
    AssumptionViolation = 2,
    NumericalBlowup = 3,
    Unsupported = 4,
    NullPointer = 5,
    Io = 6,
    Panic = 7,
}

/// Spectral basis.
pub struct ScbfBasis(Arc<BasisSet>);

/// Divergence-free field on a basis.
pub struct ScbfField(SpectralField);

/// Model parameters.
pub struct ScbfModel(ModelParams);

/// Recorded solution path.
pub struct ScbfTrajectory(Trajectory);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("no interior nul");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> ScbfStatus {
    match e {
        Error::InvalidArgument(_) | Error::Config(_) => ScbfStatus::InvalidArgument,
        Error::AssumptionViolation(_) => ScbfStatus::AssumptionViolation,
        Error::NumericalBlowup { .. } => ScbfStatus::NumericalBlowup,
        Error::UnsupportedRegime(_) => ScbfStatus::Unsupported,
        Error::Io(_) => ScbfStatus::Io,
    }
}

enum Failure {
    Null(&'static str),
    Core(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> ScbfStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => ScbfStatus::Ok,
        Ok(Err(Failure::Null(what))) => {
            set_error(format!("null pointer: {what}"));
            ScbfStatus::NullPointer
        }
        Ok(Err(Failure::Core(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("internal panic: {msg}"));
            ScbfStatus::Panic
        }
    }
}

unsafe fn deref<'a, T>(p: *const T, what: &'static str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or(Failure::Null(what))
}

unsafe fn out_ptr<'a, T>(p: *mut T, what: &'static str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or(Failure::Null(what))
}

fn boxed<T>(v: T) -> *mut T {
    Box::into_raw(Box::new(v))
}

/// Message of the last failure on this thread, or null. Valid until the
/// next failing call on the same thread.
#[no_mangle]
pub extern "C" fn scbf_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static nul-terminated string.
#[no_mangle]
pub extern "C" fn scbf_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// # Safety
/// `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn scbf_basis_new(n: u32, dealias: f64, out: *mut *mut ScbfBasis) -> ScbfStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        *out = boxed(ScbfBasis(BasisSet::new(n as usize, dealias)?));
        Ok(())
    })
}

/// # Safety
/// `basis` must come from [`scbf_basis_new`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn scbf_basis_free(basis: *mut ScbfBasis) {
    if !basis.is_null() {
        drop(Box::from_raw(basis));
    }
}

/// Number of real H-coordinates, or 0 for a null handle.
///
/// # Safety
/// `basis` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn scbf_basis_dim(basis: *const ScbfBasis) -> usize {
    basis.as_ref().map_or(0, |b| b.0.dim())
}

/// Smallest Stokes eigenvalue, or NaN for a null handle.
///
/// # Safety
/// `basis` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn scbf_basis_lambda_1(basis: *const ScbfBasis) -> f64 {
    basis.as_ref().map_or(f64::NAN, |b| b.0.lambda_1())
}

/// Field from `len == dim` orthonormal H-coordinates.
///
/// # Safety
/// `coords` must point to `len` doubles; `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn scbf_field_from_coords(
    basis: *const ScbfBasis,
    coords: *const f64,
    len: usize,
    out: *mut *mut ScbfField,
) -> ScbfStatus {
    guard(|| {
        let b = deref(basis, "basis")?;
        let out = out_ptr(out, "out")?;
        if coords.is_null() {
            return Err(Failure::Null("coords"));
        }
        let c = std::slice::from_raw_parts(coords, len);
        *out = boxed(ScbfField(SpectralField::from_coords(&b.0, c)?));
        Ok(())
    })
}

/// Copies the H-coordinates into `buf`, which must hold `dim` doubles.
///
/// # Safety
/// `buf` must point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn scbf_field_coords(field: *const ScbfField, buf: *mut f64, len: usize) -> ScbfStatus {
    guard(|| {
        let f = deref(field, "field")?;
        if buf.is_null() {
            return Err(Failure::Null("buf"));
        }
        let c = f.0.coords();
        if len != c.len() {
            return Err(Error::InvalidArgument(format!("buffer holds {len} values, field has {}", c.len())).into());
        }
        std::slice::from_raw_parts_mut(buf, len).copy_from_slice(&c);
        Ok(())
    })
}

/// `|u|_H` and `|u|_V`; either output may be null.
///
/// # Safety
/// Non-null outputs must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn scbf_field_norms(field: *const ScbfField, norm_h: *mut f64, norm_v: *mut f64) -> ScbfStatus {
    guard(|| {
        let f = deref(field, "field")?;
        if let Some(h) = norm_h.as_mut() {
            *h = f.0.norm_h();
        }
        if let Some(v) = norm_v.as_mut() {
            *v = f.0.norm_v();
        }
        Ok(())
    })
}

/// # Safety
/// `field` must be null or a handle not used afterwards.
#[no_mangle]
pub unsafe extern "C" fn scbf_field_free(field: *mut ScbfField) {
    if !field.is_null() {
        drop(Box::from_raw(field));
    }
}

/// Model from a TOML document with the fields of the `[model]` table; an
/// empty string gives the defaults.
///
/// # Safety
/// `toml_text` must be a nul-terminated UTF-8 string.
#[no_mangle]
pub unsafe extern "C" fn scbf_model_from_toml(toml_text: *const c_char, out: *mut *mut ScbfModel) -> ScbfStatus {
    guard(|| {
        if toml_text.is_null() {
            return Err(Failure::Null("toml_text"));
        }
        let out = out_ptr(out, "out")?;
        let s = CStr::from_ptr(toml_text)
            .to_str()
            .map_err(|e| Error::InvalidArgument(e.to_string()))?;
        let m: ModelParams = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        m.validate()?;
        *out = boxed(ScbfModel(m));
        Ok(())
    })
}

/// # Safety
/// `model` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn scbf_model_set_scales(model: *mut ScbfModel, eps: f64, delta: f64) -> ScbfStatus {
    guard(|| {
        let m = out_ptr(model, "model")?;
        let next = m.0.with_scales(eps, delta);
        next.validate()?;
        m.0 = next;
        Ok(())
    })
}

/// Checks the fast dissipation condition on `basis`.
///
/// # Safety
/// Handles must be live.
#[no_mangle]
pub unsafe extern "C" fn scbf_model_check(model: *const ScbfModel, basis: *const ScbfBasis) -> ScbfStatus {
    guard(|| {
        let m = deref(model, "model")?;
        let b = deref(basis, "basis")?;
        m.0.check_fast_dissipation(b.0.lambda_1())?;
        Ok(())
    })
}

/// # Safety
/// `model` must be null or a handle not used afterwards.
#[no_mangle]
pub unsafe extern "C" fn scbf_model_free(model: *mut ScbfModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// One slow-fast sample path with step `dt` (0 selects the default) and
/// noise stream `path`.
///
/// # Safety
/// Handles must be live; `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn scbf_simulate(
    model: *const ScbfModel,
    x0: *const ScbfField,
    y0: *const ScbfField,
    dt: f64,
    path: u64,
    out: *mut *mut ScbfTrajectory,
) -> ScbfStatus {
    guard(|| {
        let m = deref(model, "model")?;
        let x = deref(x0, "x0")?;
        let y = deref(y0, "y0")?;
        let out = out_ptr(out, "out")?;
        let mut opts = SimOptions::for_basis(x.0.basis()).with_path(path);
        if dt != 0.0 {
            opts.dt = dt;
        }
        *out = boxed(ScbfTrajectory(simulate_slow_fast(&m.0, &x.0, &y.0, &opts)?));
        Ok(())
    })
}

/// Averaged equation with the closed-form drift.
///
/// # Safety
/// Handles must be live; `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn scbf_solve_averaged(
    model: *const ScbfModel,
    x0: *const ScbfField,
    dt: f64,
    out: *mut *mut ScbfTrajectory,
) -> ScbfStatus {
    guard(|| {
        let m = deref(model, "model")?;
        let x = deref(x0, "x0")?;
        let out = out_ptr(out, "out")?;
        *out = boxed(ScbfTrajectory(solve_averaged(&m.0, &x.0, dt, &DriftMode::ClosedForm)?));
        Ok(())
    })
}

/// Number of snapshots, or 0 for a null handle.
///
/// # Safety
/// `traj` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn scbf_trajectory_len(traj: *const ScbfTrajectory) -> usize {
    traj.as_ref().map_or(0, |t| t.0.len())
}

/// Time and H, V, L^{r+1} norms of snapshot `index`; outputs may be null.
///
/// # Safety
/// Non-null outputs must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn scbf_trajectory_sample(
    traj: *const ScbfTrajectory,
    index: usize,
    time: *mut f64,
    norm_h: *mut f64,
    norm_v: *mut f64,
    norm_lr1: *mut f64,
) -> ScbfStatus {
    guard(|| {
        let t = deref(traj, "traj")?;
        if index >= t.0.len() {
            return Err(Error::InvalidArgument(format!("index {index} out of range {}", t.0.len())).into());
        }
        let n = t.0.norms[index];
        for (p, v) in [(time, t.0.times[index]), (norm_h, n.h), (norm_v, n.v), (norm_lr1, n.lr1)] {
            if let Some(p) = p.as_mut() {
                *p = v;
            }
        }
        Ok(())
    })
}

/// Copy of the slow state at snapshot `index`.
///
/// # Safety
/// `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn scbf_trajectory_state(
    traj: *const ScbfTrajectory,
    index: usize,
    out: *mut *mut ScbfField,
) -> ScbfStatus {
    guard(|| {
        let t = deref(traj, "traj")?;
        let out = out_ptr(out, "out")?;
        let s = t
            .0
            .states()
            .get(index)
            .ok_or_else(|| Error::InvalidArgument(format!("index {index} out of range")))?;
        *out = boxed(ScbfField(s.clone()));
        Ok(())
    })
}

/// # Safety
/// `traj` must be null or a handle not used afterwards.
#[no_mangle]
pub unsafe extern "C" fn scbf_trajectory_free(traj: *mut ScbfTrajectory) {
    if !traj.is_null() {
        drop(Box::from_raw(traj));
    }
}
