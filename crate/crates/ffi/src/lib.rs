//! C ABI over `bridgematch`.
//!
//! Every fallible function returns a [`BmStatus`]. On failure the message is
//! available from [`bm_last_error_message`] on the same thread. Arrays are
//! row-major `f64` buffers owned by the caller.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use bridgematch::{
    alpha_star, energy_distance, f_alpha, sample_endpoints, BridgeSpec, Checkpoint, Error, GaussianCouplingSpec,
    Integrator, Points, RngStream, SamplerConfig,
};

/// Stream label used by `bm sample` for integration noise.
const SAMPLER_LABEL: u64 = 2;

/// Result codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BmStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    DimensionMismatch = 3,
    Parse = 4,
    Io = 5,
    Numerical = 6,
    Panic = 7,
}

/// Sampler integrators.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BmIntegrator {
    BridgePosterior = 0,
    EulerMaruyama = 1,
}

fn parse_integrator(code: u32) -> Result<Integrator, Failure> {
    match code {
        c if c == BmIntegrator::BridgePosterior as u32 => Ok(Integrator::BridgePosterior),
        c if c == BmIntegrator::EulerMaruyama as u32 => Ok(Integrator::EulerMaruyama),
        _ => Err(Failure(BmStatus::InvalidArgument, format!("unknown integrator {code}"))),
    }
}

/// A loaded checkpoint. Opaque to C.
pub struct BmCheckpoint {
    inner: Checkpoint,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> BmStatus {
    match e {
        Error::DimensionMismatch { .. } => BmStatus::DimensionMismatch,
        Error::InvalidArgument(_) | Error::SingularTime(_) => BmStatus::InvalidArgument,
        Error::Parse { .. } => BmStatus::Parse,
        Error::Io(_) => BmStatus::Io,
        Error::SingularCovariance
        | Error::Quadrature { .. }
        | Error::SinkhornNotConverged { .. }
        | Error::NonFiniteLoss { .. }
        | Error::NonFiniteState { .. } => BmStatus::Numerical,
    }
}

struct Failure(BmStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(BmStatus::NullPointer, format!("{what} is null"))
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> BmStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => BmStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(&msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            BmStatus::Panic
        }
    }
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

unsafe fn checkpoint<'a>(h: *const BmCheckpoint) -> Result<&'a Checkpoint, Failure> {
    h.as_ref().map(|c| &c.inner).ok_or_else(|| null("checkpoint"))
}

unsafe fn out_ref<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| null(what))
}

/// Message for the last failure on this thread, or null. Valid until the
/// next failing call on the same thread.
#[no_mangle]
pub extern "C" fn bm_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Load a checkpoint file. Free the handle with [`bm_checkpoint_free`].
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn bm_checkpoint_load(path: *const c_char, out: *mut *mut BmCheckpoint) -> BmStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        *out = ptr::null_mut();
        if path.is_null() {
            return Err(null("path"));
        }
        let path = CStr::from_ptr(path)
            .to_str()
            .map_err(|_| Failure(BmStatus::InvalidArgument, "path is not UTF-8".into()))?;
        let inner = Checkpoint::load(Path::new(path)).map_err(|e| {
            let Failure(status, msg) = Failure::from(e);
            Failure(status, format!("{path}: {msg}"))
        })?;
        *out = Box::into_raw(Box::new(BmCheckpoint { inner }));
        Ok(())
    })
}

/// Parse a checkpoint from its text form.
///
/// # Safety
/// `text` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn bm_checkpoint_parse(text: *const c_char, out: *mut *mut BmCheckpoint) -> BmStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        *out = ptr::null_mut();
        if text.is_null() {
            return Err(null("text"));
        }
        let text = CStr::from_ptr(text)
            .to_str()
            .map_err(|_| Failure(BmStatus::InvalidArgument, "text is not UTF-8".into()))?;
        let inner = Checkpoint::parse(text)?;
        *out = Box::into_raw(Box::new(BmCheckpoint { inner }));
        Ok(())
    })
}

/// Release a handle. Null is ignored.
///
/// # Safety
/// `handle` must come from this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn bm_checkpoint_free(handle: *mut BmCheckpoint) {
    if !handle.is_null() {
        drop(Box::from_raw(handle));
    }
}

/// State dimension of the model, or 0 for a null handle.
///
/// # Safety
/// `handle` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn bm_checkpoint_state_dim(handle: *const BmCheckpoint) -> usize {
    handle.as_ref().map_or(0, |c| c.inner.model.state_dim())
}

/// Conditioning dimension of the model (0 when unconditioned).
///
/// # Safety
/// `handle` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn bm_checkpoint_cond_dim(handle: *const BmCheckpoint) -> usize {
    handle.as_ref().map_or(0, |c| c.inner.model.cond_dim())
}

/// Bridge noise scale the model was trained with, or NaN for a null handle.
///
/// # Safety
/// `handle` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn bm_checkpoint_sigma(handle: *const BmCheckpoint) -> f64 {
    handle.as_ref().map_or(f64::NAN, |c| c.inner.sigma)
}

/// Endpoint prediction at one state. `x_t` and `out` have `state_dim`
/// entries; `cond` has `cond_dim` entries and may be null when that is 0.
///
/// # Safety
/// Pointers must be valid for the stated lengths.
#[no_mangle]
pub unsafe extern "C" fn bm_checkpoint_predict(
    handle: *const BmCheckpoint,
    x_t: *const f64,
    cond: *const f64,
    t: f64,
    out: *mut f64,
) -> BmStatus {
    guard(|| {
        let ckpt = checkpoint(handle)?;
        let d = ckpt.model.state_dim();
        let c = ckpt.model.cond_dim();
        let x = slice(x_t, d, "x_t")?;
        let cond = if c == 0 { None } else { Some(slice(cond, c, "cond")?) };
        let pred = ckpt.model.predict(x, cond, t)?;
        slice_mut(out, d, "out")?.copy_from_slice(&pred);
        Ok(())
    })
}

/// Integrate `n` paths from the rows of `x0` (`n * state_dim` values) and
/// write the endpoints to `x1`. `integrator` is a [`BmIntegrator`] value.
/// Matches `bm sample` for the same seed and initial points.
///
/// # Safety
/// Pointers must be valid for `n * state_dim` values.
#[no_mangle]
pub unsafe extern "C" fn bm_checkpoint_sample_endpoints(
    handle: *const BmCheckpoint,
    x0: *const f64,
    n: usize,
    num_steps: usize,
    integrator: u32,
    seed: u64,
    x1: *mut f64,
) -> BmStatus {
    guard(|| {
        let ckpt = checkpoint(handle)?;
        let integrator = parse_integrator(integrator)?;
        let d = ckpt.model.state_dim();
        let len = n
            .checked_mul(d)
            .ok_or_else(|| Failure(BmStatus::InvalidArgument, "n * state_dim overflows".into()))?;
        let x0s = Points::from_flat(d, slice(x0, len, "x0")?.to_vec())?;
        let spec = BridgeSpec::new(ckpt.sigma, d)?;
        let cfg = SamplerConfig::new(num_steps, integrator);
        let stream = RngStream::new(seed).split(SAMPLER_LABEL);
        let batch = sample_endpoints(&ckpt.model, &spec, &cfg, &x0s, &stream)?;
        slice_mut(x1, len, "x1")?.copy_from_slice(batch.x1.as_flat());
        Ok(())
    })
}

/// Fixed point of the projected Gaussian correlation for noise `sigma`.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn bm_alpha_star(sigma: f64, out: *mut f64) -> BmStatus {
    guard(|| {
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Failure(
                BmStatus::InvalidArgument,
                format!("sigma must be positive, got {sigma}"),
            ));
        }
        *out_ref(out, "out")? = alpha_star(sigma);
        Ok(())
    })
}

/// Correlation of the Markovian projection of the unit Gaussian coupling
/// with correlation `alpha`.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn bm_f_alpha(alpha: f64, sigma: f64, out: *mut f64) -> BmStatus {
    guard(|| {
        let v = f_alpha(&GaussianCouplingSpec::new(alpha, sigma)?)?;
        *out_ref(out, "out")? = v;
        Ok(())
    })
}

/// Energy distance between `na` and `nb` points of dimension `dim`.
///
/// # Safety
/// `a` and `b` must be valid for `na * dim` and `nb * dim` values.
#[no_mangle]
pub unsafe extern "C" fn bm_energy_distance(
    a: *const f64,
    na: usize,
    b: *const f64,
    nb: usize,
    dim: usize,
    out: *mut f64,
) -> BmStatus {
    guard(|| {
        if dim == 0 {
            return Err(Failure(BmStatus::InvalidArgument, "dim must be positive".into()));
        }
        let overflow = || Failure(BmStatus::InvalidArgument, "length overflows".into());
        let pa = Points::from_flat(dim, slice(a, na.checked_mul(dim).ok_or_else(overflow)?, "a")?.to_vec())?;
        let pb = Points::from_flat(dim, slice(b, nb.checked_mul(dim).ok_or_else(overflow)?, "b")?.to_vec())?;
        *out_ref(out, "out")? = energy_distance(&pa, &pb)?;
        Ok(())
    })
}
