//! C ABI over the estimator.
//!
//! Objects cross the boundary as opaque handles created by `sp_*_new` and
//! released by the matching `sp_*_free`. Every fallible call returns an
//! `SpStatus`; the message of the last failure on the calling thread is
//! available from `sp_last_error`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::slice;

use nalgebra::{DMatrix, DVector};
use shadowprice::inference::DebiasVariance;
use shadowprice::model::{Dataset, LeastSquares, LossScale};
use shadowprice::pipeline::{run_pipeline, PipelineConfig, PipelineOutput};
use shadowprice::restriction::{RestrictionSystem, SigmaSpec};
use shadowprice::tolerance::GridSpec;
use shadowprice::Error;

/// Result codes. Zero is success.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpStatus {
    Ok = 0,
    NullPointer = 1,
    /// Bad arguments, restriction syntax or configuration.
    InvalidInput = 2,
    /// Data problems: dimensions, rank, non-finite values.
    Data = 3,
    /// Solver or variance failure.
    Numerical = 4,
    /// Output buffer has the wrong length.
    BufferSize = 5,
    Panic = 6,
}

/// Which parameter vector `sp_fit_vector` copies out.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpVector {
    Unconstrained = 0,
    Constrained = 1,
    Debiased = 2,
    StandardError = 3,
    CiLower = 4,
    CiUpper = 5,
    Isp = 6,
    IspStandardError = 7,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpLossScale {
    Half = 0,
    Mean = 1,
}

/// Estimation settings. Start from `sp_fit_options_default`.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct SpFitOptions {
    pub c0: f64,
    pub grid_size: usize,
    pub lower_ratio: f64,
    pub level: f64,
    pub screen_level: f64,
    pub loss_scale: SpLossScale,
}

pub struct SpDataset(Dataset);
pub struct SpRestrictions(RestrictionSystem);
pub struct SpFit(PipelineOutput);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> SpStatus {
    match e.exit_code() {
        1 => SpStatus::InvalidInput,
        2 => SpStatus::Data,
        _ => SpStatus::Numerical,
    }
}

fn guard(f: impl FnOnce() -> Result<(), (SpStatus, String)>) -> SpStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            SpStatus::Ok
        }
        Ok(Err((status, msg))) => {
            set_error(&msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            SpStatus::Panic
        }
    }
}

fn lib_err(e: Error) -> (SpStatus, String) {
    (status_of(&e), e.to_string())
}

fn null(what: &str) -> (SpStatus, String) {
    (SpStatus::NullPointer, format!("{what} is null"))
}

/// Message for the last failed call on this thread; empty after success.
/// Valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn sp_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn sp_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Build a dataset from `y[n]` and a row-major `x[n * p]`. When
/// `has_intercept` is non-zero the first column of `x` must be all ones.
///
/// # Safety
/// `y` must point to `n` doubles, `x` to `n * p` doubles, `out` to writable
/// storage for one pointer.
#[no_mangle]
pub unsafe extern "C" fn sp_dataset_new(
    y: *const f64,
    x: *const f64,
    n: usize,
    p: usize,
    has_intercept: i32,
    out: *mut *mut SpDataset,
) -> SpStatus {
    guard(|| {
        if y.is_null() || x.is_null() || out.is_null() {
            return Err(null("argument"));
        }
        if n == 0 || p == 0 {
            return Err((SpStatus::InvalidInput, "n and p must be positive".into()));
        }
        let yv = DVector::from_column_slice(slice::from_raw_parts(y, n));
        let xm = DMatrix::from_row_slice(n, p, slice::from_raw_parts(x, n * p));
        let data = Dataset::from_matrix(yv, xm, has_intercept != 0).map_err(lib_err)?;
        *out = Box::into_raw(Box::new(SpDataset(data)));
        Ok(())
    })
}

/// # Safety
/// `data` must come from `sp_dataset_new` and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn sp_dataset_free(data: *mut SpDataset) {
    if !data.is_null() {
        drop(Box::from_raw(data));
    }
}

/// Parse `q` restriction expressions over `p` parameters. `sigma_diag` may be
/// null (identity credibility matrix) or point to `q` positive weights.
///
/// # Safety
/// `exprs` must point to `q` NUL-terminated strings; `sigma_diag`, when not
/// null, to `q` doubles; `out` to writable storage for one pointer.
#[no_mangle]
pub unsafe extern "C" fn sp_restrictions_new(
    exprs: *const *const c_char,
    q: usize,
    p: usize,
    sigma_diag: *const f64,
    out: *mut *mut SpRestrictions,
) -> SpStatus {
    guard(|| {
        if exprs.is_null() || out.is_null() {
            return Err(null("argument"));
        }
        let mut texts = Vec::with_capacity(q);
        for &e in slice::from_raw_parts(exprs, q) {
            if e.is_null() {
                return Err(null("restriction string"));
            }
            let s = CStr::from_ptr(e).to_str().map_err(|_| {
                (
                    SpStatus::InvalidInput,
                    "restriction is not valid UTF-8".to_string(),
                )
            })?;
            texts.push(s.to_owned());
        }
        let sigma = if sigma_diag.is_null() {
            SigmaSpec::Identity
        } else {
            SigmaSpec::Diagonal(slice::from_raw_parts(sigma_diag, q).to_vec())
        };
        let sys = RestrictionSystem::parse(&texts, p, &sigma).map_err(lib_err)?;
        *out = Box::into_raw(Box::new(SpRestrictions(sys)));
        Ok(())
    })
}

/// # Safety
/// `sys` must come from `sp_restrictions_new` and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn sp_restrictions_free(sys: *mut SpRestrictions) {
    if !sys.is_null() {
        drop(Box::from_raw(sys));
    }
}

#[no_mangle]
pub extern "C" fn sp_fit_options_default() -> SpFitOptions {
    let g = GridSpec::default();
    SpFitOptions {
        c0: g.c0,
        grid_size: g.size,
        lower_ratio: g.lower_ratio,
        level: 0.95,
        screen_level: 0.05,
        loss_scale: SpLossScale::Half,
    }
}

/// Run the estimator: tolerance selection, constrained solution, debiasing,
/// ISPs and the plateau cutoff. `opts` may be null for defaults.
///
/// # Safety
/// `data` and `sys` must be live handles; `opts` null or valid; `out`
/// writable storage for one pointer.
#[no_mangle]
pub unsafe extern "C" fn sp_fit(
    data: *const SpDataset,
    sys: *const SpRestrictions,
    opts: *const SpFitOptions,
    out: *mut *mut SpFit,
) -> SpStatus {
    guard(|| {
        if data.is_null() || sys.is_null() || out.is_null() {
            return Err(null("argument"));
        }
        let o = if opts.is_null() {
            sp_fit_options_default()
        } else {
            *opts
        };
        let mut cfg = PipelineConfig {
            grid: GridSpec {
                c0: o.c0,
                size: o.grid_size,
                lower_ratio: o.lower_ratio,
                ..Default::default()
            },
            level: o.level,
            debias_variance: DebiasVariance::Influence,
            ..Default::default()
        };
        cfg.plateau.screen_level = o.screen_level;
        cfg.validate().map_err(lib_err)?;
        let loss = LeastSquares::new(match o.loss_scale {
            SpLossScale::Half => LossScale::Half,
            SpLossScale::Mean => LossScale::Mean,
        });
        let fit = run_pipeline(&(*data).0, &loss, &(*sys).0, &cfg).map_err(lib_err)?;
        *out = Box::into_raw(Box::new(SpFit(fit)));
        Ok(())
    })
}

/// # Safety
/// `fit` must come from `sp_fit` and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn sp_fit_free(fit: *mut SpFit) {
    if !fit.is_null() {
        drop(Box::from_raw(fit));
    }
}

/// Number of parameters and restrictions.
///
/// # Safety
/// `fit` must be a live handle; `p` and `q` writable.
#[no_mangle]
pub unsafe extern "C" fn sp_fit_dims(fit: *const SpFit, p: *mut usize, q: *mut usize) -> SpStatus {
    guard(|| {
        if fit.is_null() || p.is_null() || q.is_null() {
            return Err(null("argument"));
        }
        *p = (*fit).0.solution.theta.len();
        *q = (*fit).0.isp.isp.len();
        Ok(())
    })
}

/// Selected tolerance, multiplier and the risk proxy split at it.
///
/// # Safety
/// `fit` must be a live handle; the outputs writable.
#[no_mangle]
pub unsafe extern "C" fn sp_fit_summary(
    fit: *const SpFit,
    c_hat: *mut f64,
    lambda: *mut f64,
    risk_bias: *mut f64,
    risk_var: *mut f64,
) -> SpStatus {
    guard(|| {
        if fit.is_null()
            || c_hat.is_null()
            || lambda.is_null()
            || risk_bias.is_null()
            || risk_var.is_null()
        {
            return Err(null("argument"));
        }
        let f = &(*fit).0;
        *c_hat = f.c_hat();
        *lambda = f.solution.lambda;
        *risk_bias = f.bias;
        *risk_var = f.var;
        Ok(())
    })
}

/// Copy one result vector into `buf`, which must hold exactly `p` values
/// (`q` for the ISP kinds).
///
/// # Safety
/// `fit` must be a live handle and `buf` point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn sp_fit_vector(
    fit: *const SpFit,
    kind: SpVector,
    buf: *mut f64,
    len: usize,
) -> SpStatus {
    guard(|| {
        if fit.is_null() || buf.is_null() {
            return Err(null("argument"));
        }
        let f = &(*fit).0;
        let isp_se;
        let v: &DVector<f64> = match kind {
            SpVector::Unconstrained => &f.theta_tilde,
            SpVector::Constrained => &f.solution.theta,
            SpVector::Debiased => &f.debiased.theta_db,
            SpVector::StandardError => &f.debiased.se,
            SpVector::CiLower => &f.debiased.ci_lower,
            SpVector::CiUpper => &f.debiased.ci_upper,
            SpVector::Isp => &f.isp.isp,
            SpVector::IspStandardError => {
                isp_se = f.isp.standard_errors();
                &isp_se
            }
        };
        if v.len() != len {
            return Err((
                SpStatus::BufferSize,
                format!("buffer holds {len} values, need {}", v.len()),
            ));
        }
        ptr::copy_nonoverlapping(v.as_ptr(), buf, len);
        Ok(())
    })
}

/// Plateau size `m_hat`, or 0 when no cutoff could be computed.
///
/// # Safety
/// `fit` must be a live handle and `cutoff` writable.
#[no_mangle]
pub unsafe extern "C" fn sp_fit_plateau_cutoff(fit: *const SpFit, cutoff: *mut usize) -> SpStatus {
    guard(|| {
        if fit.is_null() || cutoff.is_null() {
            return Err(null("argument"));
        }
        *cutoff = (*fit).0.isp.cutoff.unwrap_or(0);
        Ok(())
    })
}
