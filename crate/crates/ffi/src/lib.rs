//! C interface to `ggllvm`.
//!
//! Objects cross the boundary as opaque handles created by `ggllvm_*`
//! constructors and released with the matching `*_free`. Every fallible call
//! returns a status code; on failure, `ggllvm_last_error` describes the most
//! recent error on the calling thread.

use std::cell::RefCell;
use std::ffi::{c_char, c_int, CStr, CString};
use std::fs::File;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use ggllvm::estimator::{fit_glamle, FitOptions, FitResult};
use ggllvm::io::{self, FitFile, IngestOptions};
use ggllvm::model::{Assumption, Family, ModelSpec, MultiviewData};
use ggllvm::Error;

pub const GGLLVM_OK: c_int = 0;
/// A required pointer argument was null.
pub const GGLLVM_ERR_NULL: c_int = 1;
/// An argument was out of range or inconsistent with the data.
pub const GGLLVM_ERR_INVALID: c_int = 2;
/// An input file or JSON document could not be parsed.
pub const GGLLVM_ERR_PARSE: c_int = 3;
/// A numerical routine failed.
pub const GGLLVM_ERR_NUMERICAL: c_int = 4;
pub const GGLLVM_ERR_IO: c_int = 5;
pub const GGLLVM_ERR_UNSUPPORTED: c_int = 6;
/// A caller buffer is too small; the required length is reported.
pub const GGLLVM_ERR_BUFFER: c_int = 7;
/// An internal panic was caught.
pub const GGLLVM_ERR_PANIC: c_int = 8;

pub const GGLLVM_FAMILY_BERNOULLI: c_int = 0;
pub const GGLLVM_FAMILY_POISSON: c_int = 1;
pub const GGLLVM_ASSUMPTION_A2: c_int = 0;
pub const GGLLVM_ASSUMPTION_A2PRIME: c_int = 1;

/// Multiview network data.
pub struct GgllvmData {
    inner: MultiviewData,
}

/// Result of a Laplace fit together with the labels of its data.
pub struct GgllvmFit {
    fit: FitResult,
    data: MultiviewData,
}

/// Model and optimizer settings for `ggllvm_fit`.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct GgllvmFitConfig {
    pub family: c_int,
    pub factors: usize,
    pub include_intercept: c_int,
    pub assumption: c_int,
    pub seed: u64,
    pub max_outer_iters: usize,
    pub outer_tol: f64,
    pub compute_vcov: c_int,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(message: String) {
    let c = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn error_code(e: &Error) -> c_int {
    match e {
        _ if e.is_numerical() => GGLLVM_ERR_NUMERICAL,
        Error::Parse { .. } | Error::Format(_) | Error::Json(_) => GGLLVM_ERR_PARSE,
        Error::Io(_) => GGLLVM_ERR_IO,
        Error::Unsupported(_) => GGLLVM_ERR_UNSUPPORTED,
        Error::Layer { source, .. } => error_code(source),
        _ => GGLLVM_ERR_INVALID,
    }
}

struct Fail(c_int, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(error_code(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(GGLLVM_ERR_NULL, format!("{what} is null"))
}

fn invalid(message: impl Into<String>) -> Fail {
    Fail(GGLLVM_ERR_INVALID, message.into())
}

fn guard(body: impl FnOnce() -> Result<(), Fail>) -> c_int {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => GGLLVM_OK,
        Ok(Err(Fail(code, message))) => {
            set_error(message);
            code
        }
        Err(_) => {
            set_error("internal panic".into());
            GGLLVM_ERR_PANIC
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| invalid(format!("{what} is not UTF-8")))
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| null(what))
}

fn family(code: c_int) -> Result<Family, Fail> {
    match code {
        GGLLVM_FAMILY_BERNOULLI => Ok(Family::Bernoulli),
        GGLLVM_FAMILY_POISSON => Ok(Family::Poisson),
        _ => Err(invalid(format!("unknown family code {code}"))),
    }
}

fn assumption(code: c_int) -> Result<Assumption, Fail> {
    match code {
        GGLLVM_ASSUMPTION_A2 => Ok(Assumption::A2),
        GGLLVM_ASSUMPTION_A2PRIME => Ok(Assumption::A2Prime),
        _ => Err(invalid(format!("unknown assumption code {code}"))),
    }
}

unsafe fn copy_out(values: &[f64], buf: *mut f64, len: usize, required: *mut usize) -> Result<(), Fail> {
    if !required.is_null() {
        *required = values.len();
    }
    if buf.is_null() {
        return if len == 0 { Ok(()) } else { Err(null("buffer")) };
    }
    if len < values.len() {
        return Err(Fail(
            GGLLVM_ERR_BUFFER,
            format!("buffer holds {len} values, {} required", values.len()),
        ));
    }
    ptr::copy_nonoverlapping(values.as_ptr(), buf, values.len());
    Ok(())
}

/// Message for the last failed call on this thread, or null. Valid until the
/// next failing call on the same thread.
#[no_mangle]
pub extern "C" fn ggllvm_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn ggllvm_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Reads an edge-list CSV. `directed` is 0 or 1, or -1 to use the file header.
///
/// # Safety
/// `path` must be a valid C string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ggllvm_data_from_edge_list(
    path: *const c_char,
    family_code: c_int,
    directed: c_int,
    out: *mut *mut GgllvmData,
) -> c_int {
    guard(|| {
        let path = str_arg(path, "path")?;
        if out.is_null() {
            return Err(null("out"));
        }
        let opts = IngestOptions {
            family: family(family_code)?,
            directed: match directed {
                -1 => None,
                0 => Some(false),
                1 => Some(true),
                d => return Err(invalid(format!("directed must be -1, 0 or 1, got {d}"))),
            },
        };
        let file = File::open(path).map_err(Error::from)?;
        let inner = io::read_edge_list(file, &opts)?;
        *out = Box::into_raw(Box::new(GgllvmData { inner }));
        Ok(())
    })
}

/// Builds data from `n_layers` row-major `n_nodes x n_nodes` matrices with
/// zero diagonals.
///
/// # Safety
/// `values` must point to `n_layers * n_nodes * n_nodes` integers.
#[no_mangle]
pub unsafe extern "C" fn ggllvm_data_from_dense(
    n_nodes: usize,
    n_layers: usize,
    directed: c_int,
    values: *const u32,
    out: *mut *mut GgllvmData,
) -> c_int {
    guard(|| {
        if values.is_null() {
            return Err(null("values"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        let cells = n_nodes
            .checked_mul(n_nodes)
            .and_then(|c| c.checked_mul(n_layers))
            .ok_or_else(|| invalid("dimensions overflow"))?;
        let all = std::slice::from_raw_parts(values, cells);
        let layers = all.chunks(n_nodes * n_nodes).map(<[u32]>::to_vec).collect();
        let inner = MultiviewData::from_layers(n_nodes, directed != 0, layers)?;
        *out = Box::into_raw(Box::new(GgllvmData { inner }));
        Ok(())
    })
}

/// # Safety
/// `data` must be null or a handle from this library.
#[no_mangle]
pub unsafe extern "C" fn ggllvm_data_n_nodes(data: *const GgllvmData) -> usize {
    data.as_ref().map_or(0, |d| d.inner.n_nodes())
}

/// # Safety
/// `data` must be null or a handle from this library.
#[no_mangle]
pub unsafe extern "C" fn ggllvm_data_n_layers(data: *const GgllvmData) -> usize {
    data.as_ref().map_or(0, |d| d.inner.n_layers())
}

/// # Safety
/// `data` must be null or a handle from this library, freed at most once.
#[no_mangle]
pub unsafe extern "C" fn ggllvm_data_free(data: *mut GgllvmData) {
    if !data.is_null() {
        drop(Box::from_raw(data));
    }
}

/// Defaults: Bernoulli, one factor, intercept, A2, seed 0.
#[no_mangle]
pub extern "C" fn ggllvm_fit_config_default() -> GgllvmFitConfig {
    let d = FitOptions::default();
    GgllvmFitConfig {
        family: GGLLVM_FAMILY_BERNOULLI,
        factors: 1,
        include_intercept: 1,
        assumption: GGLLVM_ASSUMPTION_A2,
        seed: d.seed,
        max_outer_iters: d.max_outer_iters,
        outer_tol: d.outer_tol,
        compute_vcov: 0,
    }
}

/// Fits the model by Laplace-approximated maximum likelihood. A fit that
/// stops without converging still returns `GGLLVM_OK`; check
/// `ggllvm_fit_converged`.
///
/// # Safety
/// `data` and `config` must be valid and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ggllvm_fit(
    data: *const GgllvmData,
    config: *const GgllvmFitConfig,
    out: *mut *mut GgllvmFit,
) -> c_int {
    guard(|| {
        let data = &handle(data, "data")?.inner;
        let config = handle(config, "config")?;
        if out.is_null() {
            return Err(null("out"));
        }
        let spec = ModelSpec {
            family: family(config.family)?,
            q: config.factors,
            include_intercept: config.include_intercept != 0,
            assumption: assumption(config.assumption)?,
            directed: data.directed,
            n_nodes: data.n_nodes(),
        };
        let opts = FitOptions {
            seed: config.seed,
            max_outer_iters: config.max_outer_iters,
            outer_tol: config.outer_tol,
            compute_vcov: config.compute_vcov != 0,
            ..FitOptions::default()
        };
        let fit = fit_glamle(data, &spec, &opts)?;
        *out = Box::into_raw(Box::new(GgllvmFit {
            fit,
            data: data.clone(),
        }));
        Ok(())
    })
}

/// Restores a fit from its JSON text; `data` supplies the observations.
///
/// # Safety
/// `json` must be a valid C string, `data` a valid handle, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ggllvm_fit_from_json(
    json: *const c_char,
    data: *const GgllvmData,
    out: *mut *mut GgllvmFit,
) -> c_int {
    guard(|| {
        let text = str_arg(json, "json")?;
        let data = &handle(data, "data")?.inner;
        if out.is_null() {
            return Err(null("out"));
        }
        let file: FitFile = io::read_versioned_json(text.as_bytes())?;
        let fit = file.to_fit()?;
        data.check_spec(&fit.spec)?;
        *out = Box::into_raw(Box::new(GgllvmFit {
            fit,
            data: data.clone(),
        }));
        Ok(())
    })
}

/// 1 when the optimizer met its convergence criterion, 0 otherwise or for null.
///
/// # Safety
/// `fit` must be null or a valid handle.
#[no_mangle]
pub unsafe extern "C" fn ggllvm_fit_converged(fit: *const GgllvmFit) -> c_int {
    fit.as_ref().map_or(0, |f| c_int::from(f.fit.converged))
}

/// Approximate log-likelihood at the estimate, or NaN for null.
///
/// # Safety
/// `fit` must be null or a valid handle.
#[no_mangle]
pub unsafe extern "C" fn ggllvm_fit_loglik(fit: *const GgllvmFit) -> f64 {
    fit.as_ref().map_or(f64::NAN, |f| f.fit.loglik)
}

/// Number of dyads (rows of the loading matrix).
///
/// # Safety
/// `fit` must be null or a valid handle.
#[no_mangle]
pub unsafe extern "C" fn ggllvm_fit_n_dyads(fit: *const GgllvmFit) -> usize {
    fit.as_ref().map_or(0, |f| f.fit.alpha_hat.n_rows())
}

/// Columns of the loading matrix (factors plus intercept).
///
/// # Safety
/// `fit` must be null or a valid handle.
#[no_mangle]
pub unsafe extern "C" fn ggllvm_fit_n_cols(fit: *const GgllvmFit) -> usize {
    fit.as_ref().map_or(0, |f| f.fit.alpha_hat.n_cols())
}

/// Copies the loadings, row-major by dyad, into `buf`. `required` (if not
/// null) receives the needed length; pass a null `buf` with `len` 0 to query.
///
/// # Safety
/// `buf` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn ggllvm_fit_alpha(fit: *const GgllvmFit, buf: *mut f64, len: usize, required: *mut usize) -> c_int {
    guard(|| {
        let f = handle(fit, "fit")?;
        copy_out(f.fit.alpha_hat.values(), buf, len, required)
    })
}

/// Copies the latent covariance, row-major `q x q`.
///
/// # Safety
/// `buf` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn ggllvm_fit_sigma(fit: *const GgllvmFit, buf: *mut f64, len: usize, required: *mut usize) -> c_int {
    guard(|| {
        let f = handle(fit, "fit")?;
        let s = &f.fit.sigma_hat;
        let values: Vec<f64> = s.row_iter().flat_map(|r| r.iter().copied().collect::<Vec<_>>()).collect();
        copy_out(&values, buf, len, required)
    })
}

/// Copies the fitted edge means as `K` row-major `n x n` matrices.
///
/// # Safety
/// `buf` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn ggllvm_fit_pi_hat(fit: *const GgllvmFit, buf: *mut f64, len: usize, required: *mut usize) -> c_int {
    guard(|| {
        let f = handle(fit, "fit")?;
        let pi = f.fit.pi_hat()?;
        let values: Vec<f64> = pi
            .iter()
            .flat_map(|m| m.row_iter().flat_map(|r| r.iter().copied().collect::<Vec<_>>()).collect::<Vec<_>>())
            .collect();
        copy_out(&values, buf, len, required)
    })
}

/// Serializes the fit as JSON. Release the string with `ggllvm_string_free`.
///
/// # Safety
/// `fit` must be a valid handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ggllvm_fit_to_json(fit: *const GgllvmFit, out: *mut *mut c_char) -> c_int {
    guard(|| {
        let f = handle(fit, "fit")?;
        if out.is_null() {
            return Err(null("out"));
        }
        let mut bytes = Vec::new();
        io::write_json(&FitFile::from_fit(&f.fit, &f.data), &mut bytes)?;
        let c = CString::new(bytes).map_err(|e| invalid(e.to_string()))?;
        *out = c.into_raw();
        Ok(())
    })
}

/// # Safety
/// `fit` must be null or a handle from this library, freed at most once.
#[no_mangle]
pub unsafe extern "C" fn ggllvm_fit_free(fit: *mut GgllvmFit) {
    if !fit.is_null() {
        drop(Box::from_raw(fit));
    }
}

/// # Safety
/// `s` must be null or a string returned by this library, freed at most once.
#[no_mangle]
pub unsafe extern "C" fn ggllvm_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}
