//! C ABI over the recursive residualization state and the evaluation metrics.
//!
//! Every fallible function returns an [`RmdnStatus`]; on failure the message
//! is available from [`rmdn_last_error`] on the same thread. Matrices are
//! row-major `double` buffers.

use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use rmdn::datagen::{self, Range};
use rmdn::matrix::Mat;
use rmdn::metrics::{self, TransferRecord};
use rmdn::rls::{self, RlsError};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RmdnStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Shape = 3,
    Numerical = 4,
    Panic = 5,
}

/// Opaque residualization state: regression coefficients and inverse covariance.
pub struct RmdnState {
    inner: rls::RmdnState,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let c = CString::new(msg.into().replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

struct Failure(RmdnStatus, String);

impl From<RlsError> for Failure {
    fn from(e: RlsError) -> Self {
        let status = match e {
            RlsError::Parameter(_) => RmdnStatus::InvalidArgument,
            RlsError::Shape(_) => RmdnStatus::Shape,
            RlsError::NonFinite(_) | RlsError::Matrix(_) => RmdnStatus::Numerical,
        };
        Failure(status, e.to_string())
    }
}

impl From<metrics::MetricsError> for Failure {
    fn from(e: metrics::MetricsError) -> Self {
        Failure(RmdnStatus::InvalidArgument, e.to_string())
    }
}

impl From<datagen::DatagenError> for Failure {
    fn from(e: datagen::DatagenError) -> Self {
        Failure(RmdnStatus::InvalidArgument, e.to_string())
    }
}

impl From<rmdn::matrix::MatrixError> for Failure {
    fn from(e: rmdn::matrix::MatrixError) -> Self {
        Failure(RmdnStatus::Shape, e.to_string())
    }
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> RmdnStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => RmdnStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            RmdnStatus::Panic
        }
    }
}

fn null(what: &str) -> Failure {
    Failure(RmdnStatus::NullPointer, format!("{what} is null"))
}

unsafe fn slice<'a>(p: *const f64, len: usize, what: &str) -> Result<&'a [f64], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn slice_mut<'a>(p: *mut f64, len: usize, what: &str) -> Result<&'a mut [f64], Failure> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

unsafe fn state_ref<'a>(s: *const RmdnState) -> Result<&'a RmdnState, Failure> {
    s.as_ref().ok_or_else(|| null("state"))
}

unsafe fn state_mut<'a>(s: *mut RmdnState) -> Result<&'a mut RmdnState, Failure> {
    s.as_mut().ok_or_else(|| null("state"))
}

unsafe fn write_out<T>(out: *mut T, v: T, what: &str) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null(what));
    }
    out.write(v);
    Ok(())
}

/// Last error message on this thread, or null. Valid until the next failing call.
#[no_mangle]
pub extern "C" fn rmdn_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn rmdn_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Creates a state for design width `p` (confounders, label, bias) and `h`
/// features, with inverse covariance `epsilon·I` and ridge `lambda`.
///
/// # Safety
/// `out` must be a valid pointer to writable storage for one handle.
#[no_mangle]
pub unsafe extern "C" fn rmdn_state_new(
    p: usize,
    h: usize,
    epsilon: f64,
    lambda: f64,
    out: *mut *mut RmdnState,
) -> RmdnStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let inner = rls::RmdnState::new(p, h, epsilon, lambda)?;
        out.write(Box::into_raw(Box::new(RmdnState { inner })));
        Ok(())
    })
}

/// Releases a state. Null is ignored.
///
/// # Safety
/// `state` must come from [`rmdn_state_new`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn rmdn_state_free(state: *mut RmdnState) {
    if !state.is_null() {
        drop(Box::from_raw(state));
    }
}

/// Absorbs one design row `x` (length p) and feature row `z` (length h).
///
/// # Safety
/// `x` and `z` must point to `p` and `h` doubles.
#[no_mangle]
pub unsafe extern "C" fn rmdn_state_update_sample(
    state: *mut RmdnState,
    x: *const f64,
    z: *const f64,
) -> RmdnStatus {
    guard(|| {
        let st = state_mut(state)?;
        let x = slice(x, st.inner.design_width(), "x")?;
        let z = slice(z, st.inner.features(), "z")?;
        st.inner.update_sample(x, z)?;
        Ok(())
    })
}

/// Absorbs a batch: `x` is rows×p, `z` is rows×h.
///
/// # Safety
/// `x` and `z` must point to `rows·p` and `rows·h` doubles.
#[no_mangle]
pub unsafe extern "C" fn rmdn_state_update_batch(
    state: *mut RmdnState,
    x: *const f64,
    z: *const f64,
    rows: usize,
) -> RmdnStatus {
    guard(|| {
        let st = state_mut(state)?;
        let (p, h) = (st.inner.design_width(), st.inner.features());
        let xb = Mat::new(rows, p, slice(x, rows * p, "x")?.to_vec())?;
        let zb = Mat::new(rows, h, slice(z, rows * h, "z")?.to_vec())?;
        st.inner.update_batch(&xb, &zb)?;
        Ok(())
    })
}

/// Writes `z − x̃·β_x` to `out` (rows×h). `confounders` is rows×(p−2).
///
/// # Safety
/// Buffers must hold `rows·(p−2)`, `rows·h` and `rows·h` doubles.
#[no_mangle]
pub unsafe extern "C" fn rmdn_state_residualize(
    state: *const RmdnState,
    confounders: *const f64,
    z: *const f64,
    rows: usize,
    out: *mut f64,
) -> RmdnStatus {
    guard(|| {
        let st = state_ref(state)?;
        let (k, h) = (st.inner.num_confounders(), st.inner.features());
        let conf = Mat::new(rows, k, slice(confounders, rows * k, "confounders")?.to_vec())?;
        let out = slice_mut(out, rows * h, "out")?;
        out.copy_from_slice(slice(z, rows * h, "z")?);
        st.inner.residualize_in_place(&conf, out, rows)?;
        Ok(())
    })
}

/// Design width `p` and feature count `h`.
///
/// # Safety
/// `p` and `h` must be valid writable pointers.
#[no_mangle]
pub unsafe extern "C" fn rmdn_state_dims(
    state: *const RmdnState,
    p: *mut usize,
    h: *mut usize,
) -> RmdnStatus {
    guard(|| {
        let st = state_ref(state)?;
        write_out(p, st.inner.design_width(), "p")?;
        write_out(h, st.inner.features(), "h")
    })
}

/// Number of samples absorbed so far.
///
/// # Safety
/// `out` must be a valid writable pointer.
#[no_mangle]
pub unsafe extern "C" fn rmdn_state_n_seen(state: *const RmdnState, out: *mut u64) -> RmdnStatus {
    guard(|| write_out(out, state_ref(state)?.inner.n_seen(), "out"))
}

/// Copies β (p×h) into `out`, which must hold `len >= p·h` doubles.
///
/// # Safety
/// `out` must point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn rmdn_state_beta(state: *const RmdnState, out: *mut f64, len: usize) -> RmdnStatus {
    guard(|| copy_mat(state_ref(state)?.inner.beta(), out, len))
}

/// Copies the inverse covariance (p×p) into `out`, which must hold `len >= p·p` doubles.
///
/// # Safety
/// `out` must point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn rmdn_state_p_inv(state: *const RmdnState, out: *mut f64, len: usize) -> RmdnStatus {
    guard(|| copy_mat(state_ref(state)?.inner.p_inv(), out, len))
}

unsafe fn copy_mat(m: &Mat, out: *mut f64, len: usize) -> Result<(), Failure> {
    let need = m.data().len();
    if len < need {
        return Err(Failure(
            RmdnStatus::Shape,
            format!("output holds {len} values, need {need}"),
        ));
    }
    slice_mut(out, need, "out")?.copy_from_slice(m.data());
    Ok(())
}

/// Squared distance correlation between `x` (n×dx) and `y` (n×dy).
///
/// # Safety
/// `x` and `y` must hold `n·dx` and `n·dy` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rmdn_dcor2(
    x: *const f64,
    dx: usize,
    y: *const f64,
    dy: usize,
    n: usize,
    out: *mut f64,
) -> RmdnStatus {
    guard(|| {
        let xm = Mat::new(n, dx, slice(x, n * dx, "x")?.to_vec())?;
        let ym = Mat::new(n, dy, slice(y, n * dy, "y")?.to_vec())?;
        write_out(out, metrics::dcor2(&xm, &ym)?, "out")
    })
}

/// Distances of an S×S accuracy matrix `r` from the per-stage maxima `a`.
///
/// # Safety
/// `r` must hold `stages²` doubles, `a` `stages` doubles; outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn rmdn_transfer_distance(
    r: *const f64,
    a: *const f64,
    stages: usize,
    accd: *mut f64,
    bwtd: *mut f64,
    fwtd: *mut f64,
) -> RmdnStatus {
    guard(|| {
        let rm = Mat::new(stages, stages, slice(r, stages * stages, "r")?.to_vec())?;
        let av = slice(a, stages, "a")?.to_vec();
        let d = metrics::transfer_distance(&TransferRecord::new(rm, av)?)?;
        write_out(accd, d.accd, "accd")?;
        write_out(bwtd, d.bwtd, "bwtd")?;
        write_out(fwtd, d.fwtd, "fwtd")
    })
}

/// Best achievable accuracy when the two groups' main-effect intensities are
/// uniform on `[low1, high1]` and `[low2, high2]`.
///
/// # Safety
/// `out` must be a valid writable pointer.
#[no_mangle]
pub unsafe extern "C" fn rmdn_theoretical_max(
    low1: f64,
    high1: f64,
    low2: f64,
    high2: f64,
    out: *mut f64,
) -> RmdnStatus {
    guard(|| {
        let v = datagen::theoretical_max(Range::new(low1, high1), Range::new(low2, high2))?;
        write_out(out, v, "out")
    })
}
