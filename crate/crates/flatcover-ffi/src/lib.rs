//! C ABI over `flatcover`: opaque phase and cover handles, integer status
//! codes, and a thread-local last-error message.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use flatcover::cover::{self, FlatCover};
use flatcover::error::Error;
use flatcover::flatness;
use flatcover::geometry::Parallelogram;
use flatcover::lattice;
use flatcover::poly2::BivariatePoly;

/// Status codes returned by every fallible call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FcStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidInput = 2,
    Degenerate = 3,
    NotNormalForm = 4,
    NotFlat = 5,
    EmptyCover = 6,
    Unsupported = 7,
    Failed = 8,
    Panic = 9,
}

/// Opaque phase handle.
pub struct FcPhase(BivariatePoly);

/// Opaque cover handle.
pub struct FcCover(FlatCover);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> FcStatus {
    match e {
        Error::Input(_) | Error::Json(_) | Error::Io(_) => FcStatus::InvalidInput,
        Error::Degenerate(_) | Error::Singular(_) => FcStatus::Degenerate,
        Error::NotNormalForm(_) => FcStatus::NotNormalForm,
        Error::NotFlat { .. } => FcStatus::NotFlat,
        Error::EmptyCover => FcStatus::EmptyCover,
        Error::Unsupported(_) | Error::Aliasing(_) => FcStatus::Unsupported,
        _ => FcStatus::Failed,
    }
}

/// Runs `f`, recording errors and converting panics.
fn guard<F: FnOnce() -> Result<(), Error>>(f: F) -> FcStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => FcStatus::Ok,
        Ok(Err(e)) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Err(_) => {
            set_error("panic inside flatcover".into());
            FcStatus::Panic
        }
    }
}

macro_rules! nonnull {
    ($($p:ident),+) => {
        $(if $p.is_null() {
            set_error(concat!("null pointer: ", stringify!($p)).into());
            return FcStatus::NullPointer;
        })+
    };
}

fn box_from(b: &[f64; 6]) -> Result<Parallelogram, Error> {
    Parallelogram::new([b[0], b[1]], [b[2], b[3]], [b[4], b[5]])
}

/// Message for the last failing call on this thread, or null. Valid until
/// the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn fc_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn fc_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Builds a phase of the given degree from `n` terms `coeffs[i]·ξ₁^j[i]·ξ₂^k[i]`.
///
/// # Safety
/// `j`, `k` and `coeffs` must each point to `n` readable values; `out` must
/// be writable.
#[no_mangle]
pub unsafe extern "C" fn fc_phase_new(
    degree: u32,
    j: *const u32,
    k: *const u32,
    coeffs: *const f64,
    n: usize,
    out: *mut *mut FcPhase,
) -> FcStatus {
    nonnull!(out);
    if n > 0 {
        nonnull!(j, k, coeffs);
    }
    guard(|| {
        let terms: Vec<(usize, usize, f64)> = (0..n)
            .map(|i| {
                (
                    *j.add(i) as usize,
                    *k.add(i) as usize,
                    *coeffs.add(i),
                )
            })
            .collect();
        let p = BivariatePoly::from_terms(degree as usize, &terms)?;
        *out = Box::into_raw(Box::new(FcPhase(p)));
        Ok(())
    })
}

/// Parses the `{"degree": d, "coeffs": [[j, k, v], …]}` format.
///
/// # Safety
/// `json` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn fc_phase_from_json(json: *const c_char, out: *mut *mut FcPhase) -> FcStatus {
    nonnull!(json, out);
    guard(|| {
        let s = CStr::from_ptr(json)
            .to_str()
            .map_err(|e| Error::Input(e.to_string()))?;
        let p = BivariatePoly::from_json_str(s)?;
        *out = Box::into_raw(Box::new(FcPhase(p)));
        Ok(())
    })
}

/// # Safety
/// `p` must come from `fc_phase_new`/`fc_phase_from_json` and not be freed
/// twice. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn fc_phase_free(p: *mut FcPhase) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

/// # Safety
/// `phase` must be a live handle, `xi` two readable doubles, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn fc_phase_eval(phase: *const FcPhase, xi: *const f64, out: *mut f64) -> FcStatus {
    nonnull!(phase, xi, out);
    guard(|| {
        *out = (*phase).0.eval([*xi, *xi.add(1)]);
        Ok(())
    })
}

/// Certified upper bound on the flatness defect of the box
/// `(cx, cy, e1x, e1y, e2x, e2y)` (half-extent edges).
///
/// # Safety
/// `phase` must be a live handle, `bx` six readable doubles, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn fc_flat_defect(phase: *const FcPhase, bx: *const f64, out: *mut f64) -> FcStatus {
    nonnull!(phase, bx, out);
    guard(|| {
        *out = flatness::flat_defect(&(*phase).0, &box_from(&*(bx as *const [f64; 6]))?)?.defect;
        Ok(())
    })
}

/// # Safety
/// As for [`fc_flat_defect`].
#[no_mangle]
pub unsafe extern "C" fn fc_is_flat(
    phase: *const FcPhase,
    bx: *const f64,
    delta: f64,
    a: f64,
    out: *mut bool,
) -> FcStatus {
    nonnull!(phase, bx, out);
    guard(|| {
        *out = flatness::is_flat(&(*phase).0, &box_from(&*(bx as *const [f64; 6]))?, delta, a)?;
        Ok(())
    })
}

unsafe fn put_cover(out: *mut *mut FcCover, c: FlatCover) {
    *out = Box::into_raw(Box::new(FcCover(c)));
}

/// Rotated-rectangle cover for a phase in perturbed hyperbolic normal form.
///
/// # Safety
/// `phase` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn fc_cover_build_hp(
    phase: *const FcPhase,
    delta: f64,
    a: f64,
    out: *mut *mut FcCover,
) -> FcStatus {
    nonnull!(phase, out);
    guard(|| {
        put_cover(out, cover::build_cover_hp(&(*phase).0, delta, a)?);
        Ok(())
    })
}

/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fc_cover_canonical(delta: f64, out: *mut *mut FcCover) -> FcStatus {
    nonnull!(out);
    guard(|| {
        put_cover(out, cover::canonical_caps(delta)?);
        Ok(())
    })
}

/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fc_cover_hp_axis(delta: f64, out: *mut *mut FcCover) -> FcStatus {
    nonnull!(out);
    guard(|| {
        put_cover(out, cover::hp_axis_family(delta)?);
        Ok(())
    })
}

/// # Safety
/// `c` must come from an `fc_cover_*` constructor and not be freed twice.
/// Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn fc_cover_free(c: *mut FcCover) {
    if !c.is_null() {
        drop(Box::from_raw(c));
    }
}

/// # Safety
/// `c` must be a live handle (null gives 0).
#[no_mangle]
pub unsafe extern "C" fn fc_cover_len(c: *const FcCover) -> usize {
    if c.is_null() {
        0
    } else {
        (*c).0.len()
    }
}

/// Member `i` as `(cx, cy, e1x, e1y, e2x, e2y)`.
///
/// # Safety
/// `c` must be a live handle and `out` six writable doubles.
#[no_mangle]
pub unsafe extern "C" fn fc_cover_member(c: *const FcCover, i: usize, out: *mut f64) -> FcStatus {
    nonnull!(c, out);
    guard(|| {
        let cv = &(*c).0;
        let m = cv
            .members
            .get(i)
            .ok_or_else(|| Error::Input(format!("member {i} out of range")))?;
        let v = [m.center[0], m.center[1], m.e1[0], m.e1[1], m.e2[0], m.e2[1]];
        ptr::copy_nonoverlapping(v.as_ptr(), out, 6);
        Ok(())
    })
}

/// Verifies flatness, coverage and overlap on a `grid × grid` sample.
/// `passed` receives the verdict and `overlap_max` the sampled overlap.
///
/// # Safety
/// Handles must be live and the output pointers writable.
#[no_mangle]
pub unsafe extern "C" fn fc_cover_verify(
    c: *const FcCover,
    phase: *const FcPhase,
    eps: f64,
    grid: usize,
    passed: *mut bool,
    overlap_max: *mut u32,
) -> FcStatus {
    nonnull!(c, phase, passed, overlap_max);
    guard(|| {
        let cv = &(*c).0;
        let r = cover::verify_cover(cv, &(*phase).0, cv.delta, cv.a, eps, grid)?;
        *passed = r.passed;
        *overlap_max = r.overlap_max;
        Ok(())
    })
}

/// Serialises the cover; free the string with [`fc_string_free`].
///
/// # Safety
/// `c` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn fc_cover_to_json(c: *const FcCover, out: *mut *mut c_char) -> FcStatus {
    nonnull!(c, out);
    guard(|| {
        let s = (*c).0.to_json()?;
        *out = CString::new(s)
            .map_err(|e| Error::Input(e.to_string()))?
            .into_raw();
        Ok(())
    })
}

/// # Safety
/// `s` must come from this library and not be freed twice. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn fc_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// `min_{1≤b≤b_max} |a + √2 b| b^{1+eps}` and its argmin `b`.
///
/// # Safety
/// `min_value` and `b` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fc_pell_gap(b_max: u64, eps: f64, min_value: *mut f64, b: *mut u64) -> FcStatus {
    nonnull!(min_value, b);
    guard(|| {
        let r = lattice::pell_gap(b_max, eps)?;
        *min_value = r.min_value;
        *b = r.b;
        Ok(())
    })
}
