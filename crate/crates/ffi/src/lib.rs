//! C ABI over `recur-moments`.
//!
//! Kernels, passage laws and moment functions cross the boundary as opaque
//! handles. Each is created by a constructor that writes the handle through
//! an out-pointer and released by its `_free` function. Fallible calls return
//! an [`RmStatus`]; [`rm_last_error`] gives the message of the most recent
//! failure on the calling thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use recur_moments::chain::build_two_state;
use recur_moments::chain::stationary_distribution;
use recur_moments::momentfn::{classify, ClassifyBudget, Verdict};
use recur_moments::moments::{f_moment, MomentPolicy, MomentVerdict};
use recur_moments::passage::first_passage_law;
use recur_moments::{Error, MomentFunction, PassageLaw, TransitionKernel};

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RmStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    InvalidArgument = 3,
    InvalidState = 4,
    InvalidKernel = 5,
    Parse = 6,
    Io = 7,
    /// A precondition of the computation failed (including exhausted search budgets).
    Precondition = 8,
    /// The requested quantity does not exist, e.g. a law without tail certificate.
    Unavailable = 9,
    BufferTooSmall = 10,
    Panic = 11,
}

/// Opaque transition kernel.
pub struct RmKernel(TransitionKernel);

/// Opaque passage-time law.
pub struct RmLaw(PassageLaw);

/// Opaque moment function.
pub struct RmMomentFn(MomentFunction);

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RmMomentVerdict {
    Converged = 0,
    Diverged = 1,
    Inconclusive = 2,
}

/// `E f(T)` estimate. Log-scale fields; `lo`/`hi` are set only when
/// converged and `threshold` only when diverged (NaN otherwise).
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct RmMoment {
    pub log_partial_sum: f64,
    pub has_tail_bound: bool,
    pub log_tail_bound: f64,
    pub verdict: RmMomentVerdict,
    pub lo: f64,
    pub hi: f64,
    pub threshold: f64,
    pub horizon: u64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RmFnVerdict {
    SatisfiesC = 0,
    ViolatesCi = 1,
    ViolatesCii = 2,
    Inconclusive = 3,
}

/// Classifier outcome. `rate` is the growth rate for `ViolatesCii` (NaN
/// otherwise); `witnesses` counts the violation pairs for `ViolatesCi`.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct RmClassification {
    pub verdict: RmFnVerdict,
    pub rate: f64,
    pub witnesses: usize,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Fail(RmStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::InvalidState(_) => RmStatus::InvalidState,
            Error::InvalidKernel(_) | Error::NoSuchPath { .. } | Error::NotConverged { .. } => {
                RmStatus::InvalidKernel
            }
            Error::Parse(_) | Error::Json(_) => RmStatus::Parse,
            Error::Io(_) => RmStatus::Io,
            Error::Precondition(_)
            | Error::BudgetExhausted { .. }
            | Error::TooFewWitnesses(_)
            | Error::IncomparableHorizons(_) => RmStatus::Precondition,
            _ => RmStatus::InvalidArgument,
        };
        Fail(status, e.to_string())
    }
}

fn set_last_error(msg: Option<String>) {
    let c = msg.map(|m| CString::new(m.replace('\0', " ")).expect("no interior nul"));
    LAST_ERROR.with(|slot| *slot.borrow_mut() = c);
}

/// Runs `body`, turning errors and panics into a status and a stored message.
fn guard(body: impl FnOnce() -> Result<(), Fail>) -> RmStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => {
            set_last_error(None);
            RmStatus::Ok
        }
        Ok(Err(Fail(status, msg))) => {
            set_last_error(Some(msg));
            status
        }
        Err(_) => {
            set_last_error(Some("panic inside recur-moments".into()));
            RmStatus::Panic
        }
    }
}

fn null(what: &str) -> Fail {
    Fail(RmStatus::NullPointer, format!("`{what}` is null"))
}

unsafe fn deref<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn write<T>(out: *mut T, what: &str, value: T) -> Result<(), Fail> {
    if out.is_null() {
        return Err(null(what));
    }
    out.write(value);
    Ok(())
}

unsafe fn c_str<'a>(s: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if s.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(s)
        .to_str()
        .map_err(|_| Fail(RmStatus::InvalidUtf8, format!("`{what}` is not UTF-8")))
}

/// Message of the last failed call on this thread, or NULL after a success.
/// The pointer stays valid until the next call into this library on the
/// same thread.
#[no_mangle]
pub extern "C" fn rm_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| {
        slot.borrow()
            .as_ref()
            .map_or(std::ptr::null(), |c| c.as_ptr())
    })
}

/// Parses a kernel from its JSON form.
///
/// # Safety
/// `json` must be NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rm_kernel_from_json(
    json: *const c_char,
    out: *mut *mut RmKernel,
) -> RmStatus {
    guard(|| {
        let k = TransitionKernel::from_json_str(c_str(json, "json")?)?;
        write(out, "out", Box::into_raw(Box::new(RmKernel(k))))
    })
}

/// Two-state chain with `p(0,1) = p`, `p(0,0) = 1 - p`, `p(1,0) = 1`.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rm_kernel_two_state(p: f64, out: *mut *mut RmKernel) -> RmStatus {
    guard(|| {
        write(
            out,
            "out",
            Box::into_raw(Box::new(RmKernel(build_two_state(p)?))),
        )
    })
}

/// Number of states, 0 for NULL.
///
/// # Safety
/// `kernel` must be NULL or a live kernel handle.
#[no_mangle]
pub unsafe extern "C" fn rm_kernel_num_states(kernel: *const RmKernel) -> usize {
    kernel.as_ref().map_or(0, |k| k.0.len())
}

/// # Safety
/// `kernel` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn rm_kernel_free(kernel: *mut RmKernel) {
    if !kernel.is_null() {
        drop(Box::from_raw(kernel));
    }
}

/// Stationary distribution into `out[0..len]`; `len` must cover every state.
///
/// # Safety
/// `kernel` must be a live handle and `out` valid for `len` writes.
#[no_mangle]
pub unsafe extern "C" fn rm_stationary(
    kernel: *const RmKernel,
    tol: f64,
    out: *mut f64,
    len: usize,
) -> RmStatus {
    guard(|| {
        let k = deref(kernel, "kernel")?;
        if out.is_null() {
            return Err(null("out"));
        }
        if len < k.0.len() {
            return Err(Fail(
                RmStatus::BufferTooSmall,
                format!("need {} slots, got {len}", k.0.len()),
            ));
        }
        let pi = stationary_distribution(&k.0, tol)?;
        std::slice::from_raw_parts_mut(out, pi.len()).copy_from_slice(&pi);
        Ok(())
    })
}

/// Law of the first passage from state index `i` to `j` (return time when
/// `i == j`) over `n = 1..=horizon`.
///
/// # Safety
/// `kernel` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rm_first_passage_law(
    kernel: *const RmKernel,
    i: usize,
    j: usize,
    horizon: usize,
    out: *mut *mut RmLaw,
) -> RmStatus {
    guard(|| {
        let law = first_passage_law(&deref(kernel, "kernel")?.0, i, j, horizon)?;
        write(out, "out", Box::into_raw(Box::new(RmLaw(law))))
    })
}

/// Largest `n` whose mass is resolved, 0 for NULL.
///
/// # Safety
/// `law` must be NULL or a live law handle.
#[no_mangle]
pub unsafe extern "C" fn rm_law_horizon(law: *const RmLaw) -> u64 {
    law.as_ref().map_or(0, |l| l.0.horizon())
}

/// `ln P(T = n)`; `-inf` for resolved points without mass.
///
/// # Safety
/// `law` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rm_law_log_pmf(law: *const RmLaw, n: u64, out: *mut f64) -> RmStatus {
    guard(|| {
        let l = deref(law, "law")?;
        let lp = l.0.log_pmf(n).ok_or_else(|| {
            Fail(
                RmStatus::Unavailable,
                format!("n = {n} lies beyond the resolved horizon {}", l.0.horizon()),
            )
        })?;
        write(out, "out", lp)
    })
}

/// `ln P(T > horizon)`, NaN for NULL.
///
/// # Safety
/// `law` must be NULL or a live law handle.
#[no_mangle]
pub unsafe extern "C" fn rm_law_log_tail_mass(law: *const RmLaw) -> f64 {
    law.as_ref().map_or(f64::NAN, |l| l.0.log_tail_mass())
}

/// Geometric tail certificate: `P(T > n + period) <= rho^period P(T > n)`
/// for `n >= n0`. Returns `Unavailable` when the law has none.
///
/// # Safety
/// `law` must be a live handle; the out-pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn rm_law_tail_cert(
    law: *const RmLaw,
    n0: *mut u64,
    rho: *mut f64,
    period: *mut u64,
) -> RmStatus {
    guard(|| {
        let c = deref(law, "law")?
            .0
            .tail_cert()
            .ok_or_else(|| Fail(RmStatus::Unavailable, "law has no tail certificate".into()))?;
        write(n0, "n0", c.n0)?;
        write(rho, "rho", c.rho)?;
        write(period, "period", c.period)
    })
}

/// # Safety
/// `law` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn rm_law_free(law: *mut RmLaw) {
    if !law.is_null() {
        drop(Box::from_raw(law));
    }
}

/// Parses a moment function such as `power:2`, `logpower:1`, `exp:0.1` or
/// `burst:default`.
///
/// # Safety
/// `spec` must be NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rm_moment_fn_parse(
    spec: *const c_char,
    out: *mut *mut RmMomentFn,
) -> RmStatus {
    guard(|| {
        let f: MomentFunction = c_str(spec, "spec")?.parse()?;
        write(out, "out", Box::into_raw(Box::new(RmMomentFn(f))))
    })
}

/// `ln f(n)`.
///
/// # Safety
/// `f` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rm_moment_fn_log_eval(
    f: *const RmMomentFn,
    n: u64,
    out: *mut f64,
) -> RmStatus {
    guard(|| write(out, "out", deref(f, "f")?.0.log_eval(n)))
}

/// # Safety
/// `f` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn rm_moment_fn_free(f: *mut RmMomentFn) {
    if !f.is_null() {
        drop(Box::from_raw(f));
    }
}

/// `E f(T)` with the default policy (certified growth bounds, divergence
/// threshold `ln f(1) + ln 1e6`).
///
/// # Safety
/// `law` and `f` must be live handles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rm_f_moment(
    law: *const RmLaw,
    f: *const RmMomentFn,
    out: *mut RmMoment,
) -> RmStatus {
    guard(|| {
        let est = f_moment(
            &deref(law, "law")?.0,
            &deref(f, "f")?.0,
            &MomentPolicy::default(),
        );
        let (verdict, lo, hi, threshold) = match est.verdict {
            MomentVerdict::Converged { lo, hi } => (RmMomentVerdict::Converged, lo, hi, f64::NAN),
            MomentVerdict::Diverged { threshold } => {
                (RmMomentVerdict::Diverged, f64::NAN, f64::NAN, threshold)
            }
            MomentVerdict::Inconclusive => {
                (RmMomentVerdict::Inconclusive, f64::NAN, f64::NAN, f64::NAN)
            }
        };
        let m = RmMoment {
            log_partial_sum: est.log_partial_sum,
            has_tail_bound: est.log_tail_bound.is_some(),
            log_tail_bound: est.log_tail_bound.unwrap_or(f64::NAN),
            verdict,
            lo,
            hi,
            threshold,
            horizon: est.horizon,
        };
        write(out, "out", m)
    })
}

/// Classifies `f` against submultiplicativity and subexponential growth
/// with the default scan budget.
///
/// # Safety
/// `f` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rm_classify(f: *const RmMomentFn, out: *mut RmClassification) -> RmStatus {
    guard(|| {
        let v = classify(&deref(f, "f")?.0, &ClassifyBudget::default())?;
        let c = match v {
            Verdict::SatisfiesC => RmClassification {
                verdict: RmFnVerdict::SatisfiesC,
                rate: f64::NAN,
                witnesses: 0,
            },
            Verdict::ViolatesCi(w) => RmClassification {
                verdict: RmFnVerdict::ViolatesCi,
                rate: f64::NAN,
                witnesses: w.len(),
            },
            Verdict::ViolatesCii(rate) => RmClassification {
                verdict: RmFnVerdict::ViolatesCii,
                rate,
                witnesses: 0,
            },
            Verdict::Inconclusive => RmClassification {
                verdict: RmFnVerdict::Inconclusive,
                rate: f64::NAN,
                witnesses: 0,
            },
        };
        write(out, "out", c)
    })
}
