//! C ABI over `bnn-hmc`.
//!
//! Objects are opaque handles created by `*_new`/`*_run` functions and
//! released with the matching `*_free`. Every fallible function returns a
//! [`BnnHmcStatus`]; on failure a message is kept per thread and can be read
//! with [`bnn_hmc_last_error_message`]. Output pointers are written only on
//! success, except that a divergent trajectory still reports its end state.
//! No function unwinds across the boundary.

use std::cell::RefCell;
use std::ffi::CStr;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::slice;

use bnn_hmc::bnn::{potential, grad_potential, Activation, MlpArchitecture, PosteriorSpec, RegressionDataset};
use bnn_hmc::proxy::{acceptance_limit, efficiency_curve};
use bnn_hmc::sampler::{hmc_chain, ChainResult, HmcConfig};
use bnn_hmc::symplectic::{trajectory, PhasePoint};
use bnn_hmc::Error;
use libc::{c_char, size_t};

/// Result code of every fallible call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BnnHmcStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    DimensionMismatch = 3,
    InvalidJson = 4,
    /// The trajectory left the finite range; outputs hold the last finite
    /// state.
    Divergent = 5,
    /// A Rust panic was caught. The handle involved should be freed.
    Internal = 6,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BnnHmcActivation {
    Sigmoid = 0,
    Relu = 1,
    LeakyRelu = 2,
    Tanh = 3,
}

impl From<BnnHmcActivation> for Activation {
    fn from(a: BnnHmcActivation) -> Self {
        match a {
            BnnHmcActivation::Sigmoid => Activation::Sigmoid,
            BnnHmcActivation::Relu => Activation::Relu,
            BnnHmcActivation::LeakyRelu => Activation::LeakyRelu,
            BnnHmcActivation::Tanh => Activation::Tanh,
        }
    }
}

/// Opaque posterior: architecture, data and prior/noise scales.
pub struct BnnHmcPosterior {
    spec: PosteriorSpec,
}

/// Opaque result of a finished chain.
pub struct BnnHmcChain {
    result: ChainResult,
    dim: usize,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: impl Into<String>) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg.into());
}

fn fail(status: BnnHmcStatus, msg: impl Into<String>) -> BnnHmcStatus {
    set_error(msg);
    status
}

fn status_of(err: &Error) -> BnnHmcStatus {
    match err {
        Error::DimensionMismatch { .. } => BnnHmcStatus::DimensionMismatch,
        Error::Json(_) => BnnHmcStatus::InvalidJson,
        _ => BnnHmcStatus::InvalidArgument,
    }
}

fn from_err(err: Error) -> BnnHmcStatus {
    fail(status_of(&err), err.to_string())
}

/// Runs `f`, turning a panic into `Internal`.
fn guard(f: impl FnOnce() -> BnnHmcStatus) -> BnnHmcStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => {
            if s == BnnHmcStatus::Ok {
                set_error("");
            }
            s
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            fail(BnnHmcStatus::Internal, format!("internal error: {msg}"))
        }
    }
}

/// Borrows `len` values; a null pointer is allowed only for `len == 0`.
unsafe fn input<'a>(data: *const f64, len: usize, what: &str) -> Result<&'a [f64], BnnHmcStatus> {
    if len == 0 {
        return Ok(&[]);
    }
    if data.is_null() {
        return Err(fail(BnnHmcStatus::NullPointer, format!("{what} is null")));
    }
    Ok(slice::from_raw_parts(data, len))
}

unsafe fn output<'a>(data: *mut f64, len: usize, what: &str) -> Result<&'a mut [f64], BnnHmcStatus> {
    if len == 0 {
        return Ok(&mut []);
    }
    if data.is_null() {
        return Err(fail(BnnHmcStatus::NullPointer, format!("{what} is null")));
    }
    Ok(slice::from_raw_parts_mut(data, len))
}

unsafe fn posterior_ref<'a>(post: *const BnnHmcPosterior) -> Result<&'a PosteriorSpec, BnnHmcStatus> {
    post.as_ref()
        .map(|p| &p.spec)
        .ok_or_else(|| fail(BnnHmcStatus::NullPointer, "posterior handle is null"))
}

fn check_dim(spec: &PosteriorSpec, dim: usize) -> Result<(), BnnHmcStatus> {
    if dim == spec.dim() {
        Ok(())
    } else {
        Err(fail(
            BnnHmcStatus::DimensionMismatch,
            format!("parameter dimension is {}, got {dim}", spec.dim()),
        ))
    }
}

macro_rules! tri {
    ($e:expr) => {
        match $e {
            Ok(v) => v,
            Err(s) => return s,
        }
    };
}

/// Copies the calling thread's last error message into `buf` as a
/// NUL-terminated string, truncating to `len - 1` bytes. Returns the full
/// message length in bytes, excluding the terminator; 0 means no error.
///
/// # Safety
/// `buf` must be null or valid for `len` bytes.
#[no_mangle]
pub unsafe extern "C" fn bnn_hmc_last_error_message(buf: *mut c_char, len: size_t) -> size_t {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            ptr::copy_nonoverlapping(msg.as_ptr().cast::<c_char>(), buf, n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

/// Builds a posterior over a fully connected network.
///
/// `layer_dims` has `n_layers` entries, input width first. `inputs` holds
/// `n_points · layer_dims[0]` values and `targets` `n_points ·
/// layer_dims[n_layers-1]`, both row-major.
///
/// # Safety
/// Array pointers must be valid for the stated lengths and `out` must be a
/// valid pointer to a handle slot.
#[no_mangle]
pub unsafe extern "C" fn bnn_hmc_posterior_new(
    layer_dims: *const size_t,
    n_layers: size_t,
    activation: BnnHmcActivation,
    inputs: *const f64,
    targets: *const f64,
    n_points: size_t,
    prior_scale: f64,
    noise_scale: f64,
    out: *mut *mut BnnHmcPosterior,
) -> BnnHmcStatus {
    guard(|| {
        if out.is_null() || (layer_dims.is_null() && n_layers > 0) {
            return fail(BnnHmcStatus::NullPointer, "null argument");
        }
        let dims: Vec<usize> = if n_layers == 0 {
            Vec::new()
        } else {
            slice::from_raw_parts(layer_dims, n_layers).to_vec()
        };
        let arch = tri!(MlpArchitecture::new(dims, activation.into()).map_err(from_err));
        let (din, dout) = (arch.input_dim(), arch.output_dim());
        let x = tri!(input(inputs, n_points * din, "inputs"));
        let y = tri!(input(targets, n_points * dout, "targets"));
        let data = tri!(RegressionDataset::new(din, dout, x.to_vec(), y.to_vec()).map_err(from_err));
        let spec = tri!(PosteriorSpec::new(arch, data, prior_scale, noise_scale).map_err(from_err));
        *out = Box::into_raw(Box::new(BnnHmcPosterior { spec }));
        BnnHmcStatus::Ok
    })
}

/// Builds a posterior from its JSON document.
///
/// # Safety
/// `json` must be a NUL-terminated string and `out` a valid handle slot.
#[no_mangle]
pub unsafe extern "C" fn bnn_hmc_posterior_from_json(
    json: *const c_char,
    out: *mut *mut BnnHmcPosterior,
) -> BnnHmcStatus {
    guard(|| {
        if json.is_null() || out.is_null() {
            return fail(BnnHmcStatus::NullPointer, "null argument");
        }
        let text = match CStr::from_ptr(json).to_str() {
            Ok(t) => t,
            Err(_) => return fail(BnnHmcStatus::InvalidJson, "JSON is not UTF-8"),
        };
        let spec = tri!(PosteriorSpec::from_json(text).map_err(from_err));
        *out = Box::into_raw(Box::new(BnnHmcPosterior { spec }));
        BnnHmcStatus::Ok
    })
}

/// # Safety
/// `post` must be null or a handle from this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn bnn_hmc_posterior_free(post: *mut BnnHmcPosterior) {
    if !post.is_null() {
        drop(Box::from_raw(post));
    }
}

/// Number of network parameters, or 0 for a null handle.
///
/// # Safety
/// `post` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn bnn_hmc_posterior_dim(post: *const BnnHmcPosterior) -> size_t {
    post.as_ref().map_or(0, |p| p.spec.dim())
}

/// Potential energy `U(q)`.
///
/// # Safety
/// `q` must hold `dim` values and `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn bnn_hmc_potential(
    post: *const BnnHmcPosterior,
    q: *const f64,
    dim: size_t,
    out: *mut f64,
) -> BnnHmcStatus {
    guard(|| {
        let spec = tri!(posterior_ref(post));
        tri!(check_dim(spec, dim));
        let q = tri!(input(q, dim, "q"));
        if out.is_null() {
            return fail(BnnHmcStatus::NullPointer, "out is null");
        }
        *out = tri!(potential(spec, q).map_err(from_err));
        BnnHmcStatus::Ok
    })
}

/// Gradient of `U` at `q`, written to `grad` (`dim` values).
///
/// # Safety
/// `q` and `grad` must hold `dim` values.
#[no_mangle]
pub unsafe extern "C" fn bnn_hmc_grad_potential(
    post: *const BnnHmcPosterior,
    q: *const f64,
    dim: size_t,
    grad: *mut f64,
) -> BnnHmcStatus {
    guard(|| {
        let spec = tri!(posterior_ref(post));
        tri!(check_dim(spec, dim));
        let q = tri!(input(q, dim, "q"));
        let g = tri!(grad_potential(spec, q).map_err(from_err));
        tri!(output(grad, dim, "grad")).copy_from_slice(&g);
        BnnHmcStatus::Ok
    })
}

/// Runs `n_steps` leapfrog steps from `(q, p)` in place.
///
/// On return `q` and `p` hold the end state, `delta_h` the energy change
/// and `n_crossings` (if not null) the number of kink crossings. Returns
/// `Divergent` if the trajectory blew up.
///
/// # Safety
/// `q` and `p` must hold `dim` values; `delta_h` must be valid.
#[no_mangle]
pub unsafe extern "C" fn bnn_hmc_trajectory(
    post: *const BnnHmcPosterior,
    q: *mut f64,
    p: *mut f64,
    dim: size_t,
    step_size: f64,
    n_steps: size_t,
    delta_h: *mut f64,
    n_crossings: *mut size_t,
) -> BnnHmcStatus {
    guard(|| {
        let spec = tri!(posterior_ref(post));
        tri!(check_dim(spec, dim));
        if !(step_size > 0.0 && step_size.is_finite()) {
            return fail(BnnHmcStatus::InvalidArgument, "step size must be positive");
        }
        if delta_h.is_null() {
            return fail(BnnHmcStatus::NullPointer, "delta_h is null");
        }
        let q = tri!(output(q, dim, "q"));
        let p = tri!(output(p, dim, "p"));
        let start = PhasePoint::new(q.to_vec(), p.to_vec());
        let trace = trajectory(spec, &start, step_size, n_steps);
        q.copy_from_slice(&trace.final_state.q);
        p.copy_from_slice(&trace.final_state.p);
        *delta_h = trace.total_delta_h;
        if !n_crossings.is_null() {
            *n_crossings = trace.n_crossings();
        }
        if trace.divergent {
            fail(BnnHmcStatus::Divergent, "trajectory diverged")
        } else {
            BnnHmcStatus::Ok
        }
    })
}

/// Runs a Metropolis-adjusted HMC chain from `init` with fixed step count.
///
/// # Safety
/// `init` must hold `dim` values and `out` must be a valid handle slot.
#[no_mangle]
pub unsafe extern "C" fn bnn_hmc_chain_run(
    post: *const BnnHmcPosterior,
    init: *const f64,
    dim: size_t,
    step_size: f64,
    n_steps: size_t,
    n_samples: size_t,
    burn_in: size_t,
    seed: u64,
    out: *mut *mut BnnHmcChain,
) -> BnnHmcStatus {
    guard(|| {
        let spec = tri!(posterior_ref(post));
        tri!(check_dim(spec, dim));
        let init = tri!(input(init, dim, "init"));
        if out.is_null() {
            return fail(BnnHmcStatus::NullPointer, "out is null");
        }
        let cfg = HmcConfig::with_steps(step_size, n_steps, n_samples, burn_in, seed);
        let result = tri!(hmc_chain(spec, init, &cfg).map_err(from_err));
        *out = Box::into_raw(Box::new(BnnHmcChain { result, dim }));
        BnnHmcStatus::Ok
    })
}

/// # Safety
/// `chain` must be null or a live chain handle.
#[no_mangle]
pub unsafe extern "C" fn bnn_hmc_chain_free(chain: *mut BnnHmcChain) {
    if !chain.is_null() {
        drop(Box::from_raw(chain));
    }
}

/// Fraction of accepted proposals, burn-in included; NaN for a null handle.
///
/// # Safety
/// `chain` must be null or a live chain handle.
#[no_mangle]
pub unsafe extern "C" fn bnn_hmc_chain_acceptance_rate(chain: *const BnnHmcChain) -> f64 {
    chain.as_ref().map_or(f64::NAN, |c| c.result.acceptance_rate)
}

/// # Safety
/// `chain` must be null or a live chain handle.
#[no_mangle]
pub unsafe extern "C" fn bnn_hmc_chain_n_divergent(chain: *const BnnHmcChain) -> size_t {
    chain.as_ref().map_or(0, |c| c.result.n_divergent)
}

/// # Safety
/// `chain` must be null or a live chain handle.
#[no_mangle]
pub unsafe extern "C" fn bnn_hmc_chain_n_samples(chain: *const BnnHmcChain) -> size_t {
    chain.as_ref().map_or(0, |c| c.result.samples.len())
}

/// Copies the samples row-major into `buf`, which must hold exactly
/// `n_samples · dim` values.
///
/// # Safety
/// `buf` must be valid for `len` values.
#[no_mangle]
pub unsafe extern "C" fn bnn_hmc_chain_copy_samples(
    chain: *const BnnHmcChain,
    buf: *mut f64,
    len: size_t,
) -> BnnHmcStatus {
    guard(|| {
        let Some(c) = chain.as_ref() else {
            return fail(BnnHmcStatus::NullPointer, "chain handle is null");
        };
        let need = c.result.samples.len() * c.dim;
        if len != need {
            return fail(
                BnnHmcStatus::DimensionMismatch,
                format!("sample buffer needs {need} values, got {len}"),
            );
        }
        let out = tri!(output(buf, len, "buf"));
        for (row, s) in out.chunks_exact_mut(c.dim.max(1)).zip(&c.result.samples) {
            row.copy_from_slice(s);
        }
        BnnHmcStatus::Ok
    })
}

/// Limiting acceptance `2Φ(−l^order·√Σ/2)` for integrator order 1 or 2.
///
/// # Safety
/// `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn bnn_hmc_acceptance_limit(order: u32, l: f64, sigma: f64, out: *mut f64) -> BnnHmcStatus {
    guard(|| {
        if out.is_null() {
            return fail(BnnHmcStatus::NullPointer, "out is null");
        }
        *out = tri!(acceptance_limit(order, l, sigma).map_err(from_err));
        BnnHmcStatus::Ok
    })
}

/// Maximiser of the limiting efficiency `l·a(l)`: writes the optimal `l`,
/// acceptance and efficiency. Any output pointer may be null.
///
/// # Safety
/// Non-null outputs must be valid.
#[no_mangle]
pub unsafe extern "C" fn bnn_hmc_efficiency_optimum(
    order: u32,
    sigma: f64,
    l_opt: *mut f64,
    a_opt: *mut f64,
    efficiency_opt: *mut f64,
) -> BnnHmcStatus {
    guard(|| {
        let c = tri!(efficiency_curve(order, sigma).map_err(from_err));
        for (ptr, v) in [(l_opt, c.l_opt), (a_opt, c.a_opt), (efficiency_opt, c.efficiency_opt)] {
            if !ptr.is_null() {
                *ptr = v;
            }
        }
        BnnHmcStatus::Ok
    })
}
