//! C ABI for the csflood simulator.
//!
//! Objects cross the boundary as opaque handles that the caller releases
//! with the matching `*_free` function. Every fallible call returns a
//! [`CsfStatus`]; the message of the most recent failure on the calling
//! thread is available from [`csf_last_error`].

use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use csflood::{
    generate_signatures, ista_solve, overhead_cdma, overhead_conventional, overhead_proposed,
    reconstruction_error, run_session, ChannelModel, Error, IstaConfig, SensingParams,
    SessionConfig, SessionResult, SignatureMatrix, StepSize,
};

/// Status codes returned by every fallible function.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CsfStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidParameter = 2,
    IndexOutOfRange = 3,
    ShapeMismatch = 4,
    Numeric = 5,
    Capacity = 6,
    UndefinedMetric = 7,
    Io = 8,
    Panic = 9,
}

/// Signature matrix handle.
pub struct CsfMatrix(SignatureMatrix);

/// Finished session handle.
pub struct CsfSession(SessionResult);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> CsfStatus {
    match e {
        Error::Parameter(_) | Error::Spec { .. } => CsfStatus::InvalidParameter,
        Error::Index(_) => CsfStatus::IndexOutOfRange,
        Error::Shape { .. } => CsfStatus::ShapeMismatch,
        Error::Numeric(_) => CsfStatus::Numeric,
        Error::Capacity { .. } => CsfStatus::Capacity,
        Error::UndefinedMetric => CsfStatus::UndefinedMetric,
        Error::Io(_) => CsfStatus::Io,
    }
}

enum Fail {
    Null(&'static str),
    Core(Error),
}

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail::Core(e)
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> CsfStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            CsfStatus::Ok
        }
        Ok(Err(Fail::Null(what))) => {
            set_error(&format!("{what} is null"));
            CsfStatus::NullPointer
        }
        Ok(Err(Fail::Core(e))) => {
            set_error(&e.to_string());
            status_of(&e)
        }
        Err(_) => {
            set_error("internal panic");
            CsfStatus::Panic
        }
    }
}

fn null(what: &'static str) -> Fail {
    Fail::Null(what)
}

unsafe fn slice<'a>(p: *const f64, len: usize, what: &'static str) -> Result<&'a [f64], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn slice_mut<'a>(p: *mut f64, len: usize, what: &'static str) -> Result<&'a mut [f64], Fail> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

fn copy_out(src: &[f64], dst: &mut [f64]) -> Result<(), Fail> {
    if src.len() != dst.len() {
        return Err(Fail::Core(Error::Shape {
            expected: src.len(),
            got: dst.len(),
        }));
    }
    dst.copy_from_slice(src);
    Ok(())
}

/// Message of the last failed call on this thread; empty after a success.
/// The pointer stays valid until the next call into the library on the same
/// thread.
#[no_mangle]
pub extern "C" fn csf_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Generates the `M × N(L+1)` ±1 signature matrix.
///
/// # Safety
/// `out` must be a valid pointer to writable storage for one handle.
#[no_mangle]
pub unsafe extern "C" fn csf_matrix_generate(
    n_nodes: usize,
    max_hops: usize,
    seq_len: usize,
    seed: u64,
    out: *mut *mut CsfMatrix,
) -> CsfStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let a = generate_signatures(SensingParams::new(n_nodes, max_hops, seq_len, seed)?)?;
        *out = Box::into_raw(Box::new(CsfMatrix(a)));
        Ok(())
    })
}

/// # Safety
/// `m` must be null or a handle from [`csf_matrix_generate`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn csf_matrix_free(m: *mut CsfMatrix) {
    if !m.is_null() {
        drop(Box::from_raw(m));
    }
}

/// # Safety
/// `m` must be a live matrix handle; `rows` and `cols` writable or null.
#[no_mangle]
pub unsafe extern "C" fn csf_matrix_shape(
    m: *const CsfMatrix,
    rows: *mut usize,
    cols: *mut usize,
) -> CsfStatus {
    guard(|| {
        let m = m.as_ref().ok_or_else(|| null("matrix"))?;
        if !rows.is_null() {
            *rows = m.0.rows();
        }
        if !cols.is_null() {
            *cols = m.0.cols();
        }
        Ok(())
    })
}

/// Copies the matrix into `out` in column-major order (`rows * cols` values).
///
/// # Safety
/// `m` must be a live handle and `out` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn csf_matrix_copy(m: *const CsfMatrix, out: *mut f64, len: usize) -> CsfStatus {
    guard(|| {
        let m = m.as_ref().ok_or_else(|| null("matrix"))?;
        let dst = slice_mut(out, len, "out")?;
        let src: Vec<f64> = (0..m.0.cols()).flat_map(|c| m.0.column(c).to_vec()).collect();
        copy_out(&src, dst)
    })
}

/// Solves `min λ‖x‖₁ + ½‖y − Ax‖²` with ISTA. A `step` of zero or less
/// selects `1 / σ_max(A)²`. `y` holds `rows` values and `x_out` `cols`.
///
/// # Safety
/// `m` must be a live handle; `y` and `x_out` must hold the given lengths.
#[no_mangle]
pub unsafe extern "C" fn csf_ista_solve(
    m: *const CsfMatrix,
    y: *const f64,
    y_len: usize,
    lambda: f64,
    max_iters: usize,
    tol: f64,
    step: f64,
    x_out: *mut f64,
    x_len: usize,
) -> CsfStatus {
    guard(|| {
        let m = m.as_ref().ok_or_else(|| null("matrix"))?;
        let y = slice(y, y_len, "y")?;
        let dst = slice_mut(x_out, x_len, "x_out")?;
        let cfg = IstaConfig {
            lambda,
            max_iters,
            tol,
            step: if step > 0.0 { StepSize::Fixed(step) } else { StepSize::Auto },
        };
        let x = ista_solve(y, &m.0, &cfg)?;
        copy_out(x.values(), dst)
    })
}

/// Session parameters. Zero `max_iters` keeps the solver default.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct CsfSessionParams {
    pub k_sources: usize,
    pub t_out: usize,
    pub snr_db: f64,
    pub lambda: f64,
    pub tau: f64,
    pub max_iters: usize,
    pub forward_probability: f64,
    pub seed: u64,
}

/// Defaults matching `SessionConfig::new`.
#[no_mangle]
pub extern "C" fn csf_session_params_default() -> CsfSessionParams {
    let d = IstaConfig::default();
    CsfSessionParams {
        k_sources: 2,
        t_out: 30,
        snr_db: 10.0,
        lambda: d.lambda,
        tau: 0.5,
        max_iters: d.max_iters,
        forward_probability: 1.0,
        seed: 0,
    }
}

/// Runs one flooding session over the lattice described by `m`.
///
/// # Safety
/// `m` must be a live handle, `params` readable and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn csf_session_run(
    m: *const CsfMatrix,
    params: *const CsfSessionParams,
    out: *mut *mut CsfSession,
) -> CsfStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let m = m.as_ref().ok_or_else(|| null("matrix"))?;
        let p = params.as_ref().ok_or_else(|| null("params"))?;
        let mut cfg = SessionConfig::new(*m.0.params(), p.k_sources, p.t_out, p.seed);
        cfg.channel = ChannelModel::new(p.snr_db);
        cfg.ista.lambda = p.lambda;
        if p.max_iters > 0 {
            cfg.ista.max_iters = p.max_iters;
        }
        cfg.tau = p.tau;
        cfg.forward_probability = p.forward_probability;
        let r = run_session(&cfg, &m.0)?;
        *out = Box::into_raw(Box::new(CsfSession(r)));
        Ok(())
    })
}

/// # Safety
/// `s` must be null or a handle from [`csf_session_run`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn csf_session_free(s: *mut CsfSession) {
    if !s.is_null() {
        drop(Box::from_raw(s));
    }
}

/// Number of nodes, the length of the estimate and ground-truth vectors.
///
/// # Safety
/// `s` must be a live session handle.
#[no_mangle]
pub unsafe extern "C" fn csf_session_len(s: *const CsfSession) -> usize {
    s.as_ref().map_or(0, |s| s.0.x0.len())
}

/// Total packets transmitted during the session.
///
/// # Safety
/// `s` must be a live session handle.
#[no_mangle]
pub unsafe extern "C" fn csf_session_packets(s: *const CsfSession) -> usize {
    s.as_ref().map_or(0, |s| s.0.packets_sent)
}

/// Copies the sink estimate and, if `x0_out` is non-null, the ground truth.
///
/// # Safety
/// `s` must be a live handle; non-null buffers must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn csf_session_vectors(
    s: *const CsfSession,
    x_hat_out: *mut f64,
    x0_out: *mut f64,
    len: usize,
) -> CsfStatus {
    guard(|| {
        let s = s.as_ref().ok_or_else(|| null("session"))?;
        if !x_hat_out.is_null() {
            copy_out(&s.0.x_hat, slice_mut(x_hat_out, len, "x_hat_out")?)?;
        }
        if !x0_out.is_null() {
            copy_out(&s.0.x0, slice_mut(x0_out, len, "x0_out")?)?;
        }
        Ok(())
    })
}

/// `‖x̂ − x₀‖ / ‖x₀‖` of a finished session.
///
/// # Safety
/// `s` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn csf_session_error(s: *const CsfSession, out: *mut f64) -> CsfStatus {
    guard(|| {
        let s = s.as_ref().ok_or_else(|| null("session"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        *out = reconstruction_error(&s.0.x_hat, &s.0.x0)?;
        Ok(())
    })
}

/// # Safety
/// `x_hat` and `x0` must hold `len` doubles, `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn csf_reconstruction_error(
    x_hat: *const f64,
    x0: *const f64,
    len: usize,
    out: *mut f64,
) -> CsfStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = reconstruction_error(slice(x_hat, len, "x_hat")?, slice(x0, len, "x0")?)?;
        Ok(())
    })
}

/// Conventional bytes for one measurement routed over `hops` hops.
#[no_mangle]
pub extern "C" fn csf_overhead_conventional(n_nodes: usize, hops: usize) -> f64 {
    overhead_conventional(n_nodes, hops)
}

/// `M · P / 8`
#[no_mangle]
pub extern "C" fn csf_overhead_proposed(seq_len: usize, packets: usize) -> f64 {
    overhead_proposed(seq_len, packets)
}

/// `N (L + 1) · P / 8`
#[no_mangle]
pub extern "C" fn csf_overhead_cdma(n_nodes: usize, max_hops: usize, packets: usize) -> f64 {
    overhead_cdma(n_nodes, max_hops, packets)
}
