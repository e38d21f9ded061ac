//! C ABI over the curvature engine.
//!
//! Objects are opaque handles owned by the caller and released with the
//! matching `*_free`. Every fallible call returns a [`PhStatus`]; on failure
//! [`ph_last_error`] describes the problem for the calling thread.
//! Strings returned through out-parameters are released with [`ph_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use pseudoherm::cli_report::{run, RunConfig};
use pseudoherm::lie_models::{build_model, c0_prime, kappa, model_curvature, Family, LieModel};
use pseudoherm::pseudo_hermitian::{invariants, sample_curvatures, space_form, torsion_curvature};
use pseudoherm::tensor_space::{make_space, Curv4};
use pseudoherm::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PhStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    InvalidArgument = 3,
    OutOfScope = 4,
    Numerical = 5,
    Io = 6,
    BufferTooSmall = 7,
    Panic = 8,
}

/// A Lie-algebraic model together with its curvature.
pub struct PhModel {
    model: LieModel,
    curvature: Curv4,
}

/// A pseudo-Hermitian curvature tensor on `R^{2d}` in the adapted frame.
pub struct PhCurvature {
    rw: Curv4,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct PhConstants {
    pub d: usize,
    pub scalar: f64,
    /// NaN when the scalar curvature vanishes.
    pub c0_prime: f64,
    pub kappa: f64,
    pub cm_norm2: f64,
    pub pseudo_einstein: bool,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct PhRanges {
    pub sectional_min: f64,
    pub sectional_max: f64,
    pub holomorphic_min: f64,
    pub holomorphic_max: f64,
    pub complex_sectional_min: f64,
    pub complex_sectional_max: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).unwrap_or_default());
}

fn status_of(e: &Error) -> PhStatus {
    match e {
        Error::OutOfScope(_) => PhStatus::OutOfScope,
        Error::TagViolation { .. }
        | Error::SymmetryViolation(_)
        | Error::DegeneratePlane
        | Error::ZeroScalarCurvature
        | Error::CenterDimension(_)
        | Error::ModelInvariant { .. }
        | Error::Numerical(_) => PhStatus::Numerical,
        Error::Io(_) | Error::Serde(_) => PhStatus::Io,
        _ => PhStatus::InvalidArgument,
    }
}

struct Fail(PhStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> PhStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            PhStatus::Ok
        }
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            PhStatus::Panic
        }
    }
}

fn null(what: &str) -> Fail {
    Fail(PhStatus::NullPointer, format!("null pointer: {what}"))
}

unsafe fn read_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p).to_str().map_err(|_| Fail(PhStatus::InvalidUtf8, format!("{what} is not UTF-8")))
}

unsafe fn write_out<T>(out: *mut T, v: T, what: &str) -> Result<(), Fail> {
    if out.is_null() {
        return Err(null(what));
    }
    out.write(v);
    Ok(())
}

fn into_c_string(s: String) -> *mut c_char {
    CString::new(s.replace('\0', " ")).unwrap_or_default().into_raw()
}

/// Message for the last failed call on this thread; empty after a success.
/// The pointer stays valid until the next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn ph_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

#[no_mangle]
pub extern "C" fn ph_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// # Safety
/// `s` must be null or a string returned by this library, freed at most once.
#[no_mangle]
pub unsafe extern "C" fn ph_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Builds a model of `family` (e.g. `"su_pq"`) with `n_params` parameters.
///
/// # Safety
/// `family` must be a NUL-terminated string, `params` must point to `n_params`
/// values (or be null when `n_params` is 0), and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ph_model_new(
    family: *const c_char,
    params: *const usize,
    n_params: usize,
    out: *mut *mut PhModel,
) -> PhStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let family = Family::parse(read_str(family, "family")?)?;
        let params = if n_params == 0 {
            Vec::new()
        } else if params.is_null() {
            return Err(null("params"));
        } else {
            std::slice::from_raw_parts(params, n_params).to_vec()
        };
        let model = build_model(family, &params)?;
        let curvature = model_curvature(&model)?;
        write_out(out, Box::into_raw(Box::new(PhModel { model, curvature })), "out")
    })
}

/// # Safety
/// `m` must be null or a handle from [`ph_model_new`], freed at most once.
#[no_mangle]
pub unsafe extern "C" fn ph_model_free(m: *mut PhModel) {
    if !m.is_null() {
        drop(Box::from_raw(m));
    }
}

/// Half-dimension `d` of the model's horizontal space, 0 for a null handle.
///
/// # Safety
/// `m` must be null or a live model handle.
#[no_mangle]
pub unsafe extern "C" fn ph_model_half_dim(m: *const PhModel) -> usize {
    m.as_ref().map_or(0, |m| m.model.d)
}

/// Copies the model's curvature into a new handle.
///
/// # Safety
/// `m` must be a live model handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ph_model_curvature(m: *const PhModel, out: *mut *mut PhCurvature) -> PhStatus {
    guard(|| {
        let m = m.as_ref().ok_or_else(|| null("model"))?;
        write_out(out, Box::into_raw(Box::new(PhCurvature { rw: m.curvature.clone() })), "out")
    })
}

/// Complex hyperbolic (or projective) space form with scalar curvature `s`.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ph_space_form_new(d: usize, s: f64, out: *mut *mut PhCurvature) -> PhStatus {
    guard(|| {
        let rw = space_form(d, s)?;
        write_out(out, Box::into_raw(Box::new(PhCurvature { rw })), "out")
    })
}

/// Curvature of the model with parallel torsion and scalar curvature `s`.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ph_torsion_model_new(d: usize, s: f64, out: *mut *mut PhCurvature) -> PhStatus {
    guard(|| {
        let space = make_space(d, true)?;
        let (rw, _) = torsion_curvature(&space, s)?;
        write_out(out, Box::into_raw(Box::new(PhCurvature { rw })), "out")
    })
}

/// # Safety
/// `c` must be null or a curvature handle, freed at most once.
#[no_mangle]
pub unsafe extern "C" fn ph_curvature_free(c: *mut PhCurvature) {
    if !c.is_null() {
        drop(Box::from_raw(c));
    }
}

/// Real dimension `2d` of the horizontal space, 0 for a null handle.
///
/// # Safety
/// `c` must be null or a live curvature handle.
#[no_mangle]
pub unsafe extern "C" fn ph_curvature_dim(c: *const PhCurvature) -> usize {
    c.as_ref().map_or(0, |c| c.rw.n())
}

/// Copies the `(2d)^4` components, row-major in `(a, b, c, d)`, into `buf`.
///
/// # Safety
/// `c` must be a live curvature handle and `buf` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn ph_curvature_components(c: *const PhCurvature, buf: *mut f64, len: usize) -> PhStatus {
    guard(|| {
        let c = c.as_ref().ok_or_else(|| null("curvature"))?;
        let data = c.rw.data();
        if buf.is_null() {
            return Err(null("buf"));
        }
        if len < data.len() {
            return Err(Fail(PhStatus::BufferTooSmall, format!("need {} doubles, got {len}", data.len())));
        }
        ptr::copy_nonoverlapping(data.as_ptr(), buf, data.len());
        Ok(())
    })
}

/// Scalar curvature, rigidity constants and Chern-Moser norm.
///
/// # Safety
/// `c` must be a live curvature handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ph_curvature_constants(c: *const PhCurvature, out: *mut PhConstants) -> PhStatus {
    guard(|| {
        let c = c.as_ref().ok_or_else(|| null("curvature"))?;
        let inv = invariants(&c.rw)?;
        let c0 = match c0_prime(&c.rw) {
            Ok(v) => v,
            Err(Error::ZeroScalarCurvature) => f64::NAN,
            Err(e) => return Err(e.into()),
        };
        let k = PhConstants {
            d: c.rw.space().d(),
            scalar: inv.scalar,
            c0_prime: c0,
            kappa: kappa(&c.rw)?,
            cm_norm2: inv.cm_norm2,
            pseudo_einstein: inv.pseudo_einstein,
        };
        write_out(out, k, "out")
    })
}

/// Ranges of sectional, holomorphic sectional and complex sectional curvature
/// over `samples` seeded random planes.
///
/// # Safety
/// `c` must be a live curvature handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ph_curvature_sample(
    c: *const PhCurvature,
    samples: usize,
    seed: u64,
    out: *mut PhRanges,
) -> PhStatus {
    guard(|| {
        let c = c.as_ref().ok_or_else(|| null("curvature"))?;
        let r = sample_curvatures(&c.rw, samples, seed)?;
        let v = PhRanges {
            sectional_min: r.sectional.min,
            sectional_max: r.sectional.max,
            holomorphic_min: r.holomorphic.min,
            holomorphic_max: r.holomorphic.max,
            complex_sectional_min: r.complex_sectional.min,
            complex_sectional_max: r.complex_sectional.max,
        };
        write_out(out, v, "out")
    })
}

/// Runs a report from a JSON configuration (for example
/// `{"command":"verify","seeds":[0,1]}`; omitted fields take their defaults)
/// and returns the report document and the process-style exit code (0 pass, 1 fail).
///
/// # Safety
/// `config_json` must be a NUL-terminated string; `out_report` and `out_exit` writable.
#[no_mangle]
pub unsafe extern "C" fn ph_run_json(
    config_json: *const c_char,
    out_report: *mut *mut c_char,
    out_exit: *mut i32,
) -> PhStatus {
    guard(|| {
        if out_report.is_null() || out_exit.is_null() {
            return Err(null("out"));
        }
        let config: RunConfig = serde_json::from_str(read_str(config_json, "config_json")?)
            .map_err(|e| Fail(PhStatus::InvalidArgument, format!("bad configuration: {e}")))?;
        let doc = run(&config)?;
        let text = doc.to_json()?;
        write_out(out_exit, doc.exit_code(), "out_exit")?;
        write_out(out_report, into_c_string(text), "out_report")
    })
}
