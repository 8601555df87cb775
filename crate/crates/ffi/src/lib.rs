//! C ABI for the groupslab library.
//!
//! Conventions:
//! - Every fallible function returns a [`GsStatus`]; `GS_STATUS_OK` (0)
//!   means success. On failure a thread-local message is set and readable
//!   through [`gs_last_error`].
//! - Matrices cross the boundary as row-major `double` buffers with
//!   explicit dimensions.
//! - Opaque handles (`GsGroups`, `GsDataset`, `GsChain`, `GsMixture`) are
//!   created and destroyed by their `_new`/`_free` pairs; passing a handle
//!   after freeing it is undefined behavior, as in any C API.
//! - Structured configuration (priors, sampler settings) crosses as JSON
//!   text matching the `groupslab` CLI config schema, which keeps the ABI
//!   small and forward-compatible.
//! - Strings returned by the library are freed with [`gs_string_free`].

use std::cell::RefCell;
use std::ffi::{CStr, CString};
use std::os::raw::c_char;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use nalgebra::DMatrix;
use serde::Deserialize;

use groupslab::bvm::{build_mixture, MixtureExport, MixturePosterior};
use groupslab::harness::config::HyperSpec;
use groupslab::likelihood;
use groupslab::metrics;
use groupslab::sampler::{
    run_chain, ChainDiagnostics, JsonlSink, MoveKind, SampleSink, SamplerConfig, VecSink,
};
use groupslab::types::{Dataset, GroupStructure, SupportIndex};
use groupslab::Error;

/// Status codes returned by every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GsStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Dimension = 3,
    NotPositiveDefinite = 4,
    BudgetExceeded = 5,
    Numeric = 6,
    Io = 7,
    Parse = 8,
    Utf8 = 9,
    Panic = 10,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: &str) {
    let sanitized = msg.replace('\0', " ");
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = Some(CString::new(sanitized).unwrap_or_default());
    });
}

fn status_of(err: &Error) -> GsStatus {
    match err {
        Error::Dimension(_) => GsStatus::Dimension,
        Error::InvalidArgument(_) => GsStatus::InvalidArgument,
        Error::NotPositiveDefinite(_) => GsStatus::NotPositiveDefinite,
        Error::BudgetExceeded(_) => GsStatus::BudgetExceeded,
        Error::Numeric(_) => GsStatus::Numeric,
        Error::Io(_, _) => GsStatus::Io,
        Error::Parse { .. } => GsStatus::Parse,
    }
}

fn fail(err: Error) -> GsStatus {
    set_error(&err.to_string());
    status_of(&err)
}

/// Runs a closure with panic containment; panics become `GS_STATUS_PANIC`.
fn guarded(f: impl FnOnce() -> GsStatus) -> GsStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(status) => status,
        Err(_) => {
            set_error("internal panic");
            GsStatus::Panic
        }
    }
}

/// Last error message for this thread, or null when no error occurred.
/// The pointer stays valid until the next failing call on the thread.
#[no_mangle]
pub extern "C" fn gs_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| {
        slot.borrow()
            .as_ref()
            .map(|s| s.as_ptr())
            .unwrap_or(ptr::null())
    })
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn gs_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Frees a string returned by this library.
///
/// # Safety
/// `s` must have been returned by a groupslab function documented to
/// require `gs_string_free`, and must not be used afterward.
#[no_mangle]
pub unsafe extern "C" fn gs_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Opaque group structure.
pub struct GsGroups(GroupStructure);

/// Opaque dataset.
pub struct GsDataset(Dataset);

/// Opaque finished chain: kept samples and diagnostics.
pub struct GsChain {
    diagnostics: ChainDiagnostics,
    records: Vec<groupslab::sampler::SampleRecord>,
}

/// Opaque mixture posterior.
pub struct GsMixture(MixturePosterior);

unsafe fn row_major_matrix(data: *const f64, rows: usize, cols: usize) -> Option<DMatrix<f64>> {
    if data.is_null() && rows * cols > 0 {
        return None;
    }
    let slice = std::slice::from_raw_parts(data, rows * cols);
    Some(DMatrix::from_fn(rows, cols, |r, c| slice[r * cols + c]))
}

/// Creates a group structure from `count` positive group sizes.
///
/// # Safety
/// `sizes` must point to `count` readable values; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn gs_groups_new(
    sizes: *const usize,
    count: usize,
    out: *mut *mut GsGroups,
) -> GsStatus {
    guarded(|| {
        if sizes.is_null() || out.is_null() {
            set_error("null pointer");
            return GsStatus::NullPointer;
        }
        let sizes = std::slice::from_raw_parts(sizes, count).to_vec();
        match GroupStructure::new(sizes) {
            Ok(g) => {
                *out = Box::into_raw(Box::new(GsGroups(g)));
                GsStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// # Safety
/// `groups` must come from `gs_groups_new` and not be used afterward.
#[no_mangle]
pub unsafe extern "C" fn gs_groups_free(groups: *mut GsGroups) {
    if !groups.is_null() {
        drop(Box::from_raw(groups));
    }
}

/// Total number of predictor columns covered by the groups.
///
/// # Safety
/// `groups` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn gs_groups_num_predictors(groups: *const GsGroups) -> usize {
    if groups.is_null() {
        return 0;
    }
    (*groups).0.num_predictors()
}

/// Creates a dataset from row-major `x` (n x p) and `y` (n x d).
///
/// # Safety
/// `x` and `y` must point to `n*p` and `n*d` readable doubles; `out` must
/// be writable.
#[no_mangle]
pub unsafe extern "C" fn gs_dataset_new(
    x: *const f64,
    n: usize,
    p: usize,
    y: *const f64,
    d: usize,
    out: *mut *mut GsDataset,
) -> GsStatus {
    guarded(|| {
        if out.is_null() {
            set_error("null pointer");
            return GsStatus::NullPointer;
        }
        let (Some(x), Some(y)) = (row_major_matrix(x, n, p), row_major_matrix(y, n, d)) else {
            set_error("null data pointer");
            return GsStatus::NullPointer;
        };
        match Dataset::new(x, y) {
            Ok(dataset) => {
                *out = Box::into_raw(Box::new(GsDataset(dataset)));
                GsStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// # Safety
/// `dataset` must come from `gs_dataset_new` and not be used afterward.
#[no_mangle]
pub unsafe extern "C" fn gs_dataset_free(dataset: *mut GsDataset) {
    if !dataset.is_null() {
        drop(Box::from_raw(dataset));
    }
}

/// Gaussian log-likelihood of row-major `beta` (p x d) and `sigma` (d x d).
///
/// # Safety
/// All pointers must be live and correctly sized; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn gs_log_likelihood(
    dataset: *const GsDataset,
    beta: *const f64,
    sigma: *const f64,
    out: *mut f64,
) -> GsStatus {
    guarded(|| {
        if dataset.is_null() || out.is_null() {
            set_error("null pointer");
            return GsStatus::NullPointer;
        }
        let data = &(*dataset).0;
        let (Some(beta), Some(sigma)) = (
            row_major_matrix(beta, data.p(), data.d()),
            row_major_matrix(sigma, data.d(), data.d()),
        ) else {
            set_error("null parameter pointer");
            return GsStatus::NullPointer;
        };
        match likelihood::log_likelihood(&beta, &sigma, data) {
            Ok(v) => {
                *out = v;
                GsStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// Renyi-1/2 divergence split into covariance and mean terms.
///
/// # Safety
/// All pointers must be live and correctly sized; outputs writable.
#[no_mangle]
pub unsafe extern "C" fn gs_renyi_half(
    dataset: *const GsDataset,
    beta: *const f64,
    sigma: *const f64,
    beta0: *const f64,
    sigma0: *const f64,
    out_cov: *mut f64,
    out_mean: *mut f64,
    out_total: *mut f64,
) -> GsStatus {
    guarded(|| {
        if dataset.is_null() || out_cov.is_null() || out_mean.is_null() || out_total.is_null() {
            set_error("null pointer");
            return GsStatus::NullPointer;
        }
        let data = &(*dataset).0;
        let (p, d) = (data.p(), data.d());
        let (Some(beta), Some(sigma), Some(beta0), Some(sigma0)) = (
            row_major_matrix(beta, p, d),
            row_major_matrix(sigma, d, d),
            row_major_matrix(beta0, p, d),
            row_major_matrix(sigma0, d, d),
        ) else {
            set_error("null parameter pointer");
            return GsStatus::NullPointer;
        };
        match likelihood::renyi_half(&beta, &sigma, &beta0, &sigma0, data) {
            Ok(r) => {
                *out_cov = r.cov_term;
                *out_mean = r.mean_term;
                *out_total = r.total;
                GsStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// Squared restricted eigenvalue `phi_l2^2(s~)`; `out_exact` reports
/// whether enumeration was exhaustive.
///
/// # Safety
/// Handles must be live; outputs writable.
#[no_mangle]
pub unsafe extern "C" fn gs_restricted_eigenvalue(
    dataset: *const GsDataset,
    groups: *const GsGroups,
    s_tilde: usize,
    out_value: *mut f64,
    out_exact: *mut bool,
) -> GsStatus {
    guarded(|| {
        if dataset.is_null() || groups.is_null() || out_value.is_null() || out_exact.is_null() {
            set_error("null pointer");
            return GsStatus::NullPointer;
        }
        match metrics::restricted_eigenvalue((*dataset).0.x(), &(*groups).0, s_tilde) {
            Ok(phi) => {
                *out_value = phi.value;
                *out_exact = phi.exact;
                GsStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// Squared l2,1 compatibility number `phi_l21^2(s~)`.
///
/// # Safety
/// Handles must be live; outputs writable.
#[no_mangle]
pub unsafe extern "C" fn gs_compatibility_number(
    dataset: *const GsDataset,
    groups: *const GsGroups,
    s_tilde: usize,
    out_value: *mut f64,
    out_exact: *mut bool,
) -> GsStatus {
    guarded(|| {
        if dataset.is_null() || groups.is_null() || out_value.is_null() || out_exact.is_null() {
            set_error("null pointer");
            return GsStatus::NullPointer;
        }
        match metrics::compatibility_number((*dataset).0.x(), &(*groups).0, s_tilde) {
            Ok(phi) => {
                *out_value = phi.value;
                *out_exact = phi.exact;
                GsStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

#[derive(Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
struct FitConfig {
    hyper: HyperSpec,
    sampler: SamplerConfig,
}

fn parse_cstr<'a>(ptr: *const c_char) -> Result<Option<&'a str>, GsStatus> {
    if ptr.is_null() {
        return Ok(None);
    }
    unsafe {
        match CStr::from_ptr(ptr).to_str() {
            Ok(s) => Ok(Some(s)),
            Err(_) => {
                set_error("string is not valid UTF-8");
                Err(GsStatus::Utf8)
            }
        }
    }
}

/// Runs the MCMC sampler. `config_json` (optional) holds
/// `{"hyper": {...}, "sampler": {...}}` in the CLI config schema;
/// `sigma0` (optional, row-major d x d) fixes the covariance;
/// `chain_path` (optional) streams kept samples as JSONL to that file.
/// On success `out` receives a chain handle with diagnostics and samples.
///
/// # Safety
/// Handles must be live, strings NUL-terminated, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn gs_run_chain(
    dataset: *const GsDataset,
    groups: *const GsGroups,
    config_json: *const c_char,
    sigma0: *const f64,
    chain_path: *const c_char,
    out: *mut *mut GsChain,
) -> GsStatus {
    guarded(|| {
        if dataset.is_null() || groups.is_null() || out.is_null() {
            set_error("null pointer");
            return GsStatus::NullPointer;
        }
        let data = &(*dataset).0;
        let groups = &(*groups).0;
        let cfg: FitConfig = match parse_cstr(config_json) {
            Ok(Some(text)) => match serde_json::from_str(text) {
                Ok(cfg) => cfg,
                Err(e) => {
                    set_error(&format!("config: {e}"));
                    return GsStatus::Parse;
                }
            },
            Ok(None) => FitConfig::default(),
            Err(status) => return status,
        };
        let hp = match cfg.hyper.resolve(data, groups) {
            Ok(hp) => hp,
            Err(e) => return fail(e),
        };
        let fixed = if sigma0.is_null() {
            None
        } else {
            row_major_matrix(sigma0, data.d(), data.d())
        };
        let path = match parse_cstr(chain_path) {
            Ok(p) => p,
            Err(status) => return status,
        };
        let mut collector = VecSink::default();
        let result = match path {
            Some(p) => {
                let file = match std::fs::File::create(p) {
                    Ok(f) => f,
                    Err(e) => {
                        set_error(&format!("open {p}: {e}"));
                        return GsStatus::Io;
                    }
                };
                struct Tee<'a>(JsonlSink<std::io::BufWriter<std::fs::File>>, &'a mut VecSink);
                impl SampleSink for Tee<'_> {
                    fn record(
                        &mut self,
                        rec: &groupslab::sampler::SampleRecord,
                    ) -> groupslab::Result<()> {
                        self.0.record(rec)?;
                        self.1.record(rec)
                    }
                }
                let mut tee = Tee(JsonlSink::new(std::io::BufWriter::new(file)), &mut collector);
                run_chain(data, groups, &hp, &cfg.sampler, fixed.as_ref(), &mut tee)
            }
            None => run_chain(
                data,
                groups,
                &hp,
                &cfg.sampler,
                fixed.as_ref(),
                &mut collector,
            ),
        };
        match result {
            Ok(run) => {
                *out = Box::into_raw(Box::new(GsChain {
                    diagnostics: run.diagnostics,
                    records: collector.records,
                }));
                GsStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// # Safety
/// `chain` must come from `gs_run_chain` and not be used afterward.
#[no_mangle]
pub unsafe extern "C" fn gs_chain_free(chain: *mut GsChain) {
    if !chain.is_null() {
        drop(Box::from_raw(chain));
    }
}

/// Number of kept samples.
///
/// # Safety
/// `chain` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn gs_chain_kept(chain: *const GsChain) -> usize {
    if chain.is_null() {
        return 0;
    }
    (*chain).records.len()
}

/// Effective sample size of the log-likelihood series.
///
/// # Safety
/// `chain` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn gs_chain_ess_loglik(chain: *const GsChain) -> f64 {
    if chain.is_null() {
        return 0.0;
    }
    (*chain).diagnostics.ess_loglik
}

/// Move families addressable through [`gs_chain_acceptance_rate`].
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub enum GsMoveKind {
    Birth = 0,
    Death = 1,
    Swap = 2,
    Beta = 3,
    SigmaEigenvalue = 4,
    SigmaBasis = 5,
    SigmaGibbs = 6,
}

/// Acceptance rate of one move family (0 when never attempted).
///
/// # Safety
/// `chain` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn gs_chain_acceptance_rate(chain: *const GsChain, kind: GsMoveKind) -> f64 {
    if chain.is_null() {
        return 0.0;
    }
    let kind = match kind {
        GsMoveKind::Birth => MoveKind::Birth,
        GsMoveKind::Death => MoveKind::Death,
        GsMoveKind::Swap => MoveKind::Swap,
        GsMoveKind::Beta => MoveKind::Beta,
        GsMoveKind::SigmaEigenvalue => MoveKind::SigmaEigenvalue,
        GsMoveKind::SigmaBasis => MoveKind::SigmaBasis,
        GsMoveKind::SigmaGibbs => MoveKind::SigmaGibbs,
    };
    (*chain).diagnostics.acceptance_rate(kind)
}

/// Posterior mean of the coefficient matrix over kept samples, written to
/// a row-major `p x d` buffer.
///
/// # Safety
/// `chain` must be live; `out` must hold `p*d` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn gs_chain_posterior_mean(
    chain: *const GsChain,
    p: usize,
    d: usize,
    out: *mut f64,
) -> GsStatus {
    guarded(|| {
        if chain.is_null() || out.is_null() {
            set_error("null pointer");
            return GsStatus::NullPointer;
        }
        let records = &(*chain).records;
        if records.is_empty() {
            set_error("chain kept no samples");
            return GsStatus::InvalidArgument;
        }
        let out = std::slice::from_raw_parts_mut(out, p * d);
        out.fill(0.0);
        for rec in records {
            for &(r, c, v) in &rec.beta {
                if r >= p || c >= d {
                    set_error("record coordinates exceed the requested shape");
                    return GsStatus::Dimension;
                }
                out[r * d + c] += v;
            }
        }
        let m = records.len() as f64;
        for v in out.iter_mut() {
            *v /= m;
        }
        GsStatus::Ok
    })
}

/// Builds the exact mixture posterior at a known covariance.
/// `hyper_json` (optional) matches the CLI `hyper` schema.
///
/// # Safety
/// Handles must be live; `sigma0` must hold `d*d` doubles; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn gs_mixture_build(
    dataset: *const GsDataset,
    groups: *const GsGroups,
    sigma0: *const f64,
    hyper_json: *const c_char,
    s_cap: usize,
    out: *mut *mut GsMixture,
) -> GsStatus {
    guarded(|| {
        if dataset.is_null() || groups.is_null() || out.is_null() {
            set_error("null pointer");
            return GsStatus::NullPointer;
        }
        let data = &(*dataset).0;
        let groups = &(*groups).0;
        let Some(sigma0) = row_major_matrix(sigma0, data.d(), data.d()) else {
            set_error("null covariance pointer");
            return GsStatus::NullPointer;
        };
        let hyper: HyperSpec = match parse_cstr(hyper_json) {
            Ok(Some(text)) => match serde_json::from_str(text) {
                Ok(h) => h,
                Err(e) => {
                    set_error(&format!("hyper: {e}"));
                    return GsStatus::Parse;
                }
            },
            Ok(None) => HyperSpec::default(),
            Err(status) => return status,
        };
        let hp = match hyper.resolve(data, groups) {
            Ok(hp) => hp,
            Err(e) => return fail(e),
        };
        match build_mixture(data, groups, &sigma0, &hp, s_cap) {
            Ok(mp) => {
                *out = Box::into_raw(Box::new(GsMixture(mp)));
                GsStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// # Safety
/// `mixture` must come from `gs_mixture_build` and not be used afterward.
#[no_mangle]
pub unsafe extern "C" fn gs_mixture_free(mixture: *mut GsMixture) {
    if !mixture.is_null() {
        drop(Box::from_raw(mixture));
    }
}

/// Number of mixture components.
///
/// # Safety
/// `mixture` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn gs_mixture_num_components(mixture: *const GsMixture) -> usize {
    if mixture.is_null() {
        return 0;
    }
    (*mixture).0.components().len()
}

/// Weight of the support given as `count` (column, group) pairs; 0 when
/// the support was not enumerated.
///
/// # Safety
/// `mixture` must be live; `pairs` must hold `2*count` readable values;
/// `out` writable.
#[no_mangle]
pub unsafe extern "C" fn gs_mixture_weight_of(
    mixture: *const GsMixture,
    pairs: *const usize,
    count: usize,
    out: *mut f64,
) -> GsStatus {
    guarded(|| {
        if mixture.is_null() || out.is_null() || (pairs.is_null() && count > 0) {
            set_error("null pointer");
            return GsStatus::NullPointer;
        }
        let mp = &(*mixture).0;
        let raw = std::slice::from_raw_parts(pairs, 2 * count);
        let pairs: Vec<(usize, usize)> =
            (0..count).map(|i| (raw[2 * i], raw[2 * i + 1])).collect();
        let support =
            match SupportIndex::from_pairs(mp.d(), mp.groups().num_groups(), &pairs) {
                Ok(s) => s,
                Err(e) => return fail(e),
            };
        *out = mp.weight_of(&support).unwrap_or(0.0);
        GsStatus::Ok
    })
}

/// Serializes the mixture as JSON; free with [`gs_string_free`].
///
/// # Safety
/// `mixture` must be live; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn gs_mixture_export_json(
    mixture: *const GsMixture,
    out: *mut *mut c_char,
) -> GsStatus {
    guarded(|| {
        if mixture.is_null() || out.is_null() {
            set_error("null pointer");
            return GsStatus::NullPointer;
        }
        let export = MixtureExport::from_posterior(&(*mixture).0);
        match serde_json::to_string(&export) {
            Ok(json) => match CString::new(json) {
                Ok(cstring) => {
                    *out = cstring.into_raw();
                    GsStatus::Ok
                }
                Err(_) => {
                    set_error("serialized JSON contained a NUL byte");
                    GsStatus::Numeric
                }
            },
            Err(e) => {
                set_error(&format!("serialize mixture: {e}"));
                GsStatus::Numeric
            }
        }
    })
}
