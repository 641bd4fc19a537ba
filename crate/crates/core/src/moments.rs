//! `E f(T)` for passage laws: exact partial sums with certified tail bounds,
//! divergence by lower-bound series, and censored Monte Carlo.
//!
//! Divergence is only ever shown by a partial sum crossing a log-threshold;
//! the verdict is a lower bound, not a proof that the series is infinite.

use rayon::prelude::*;
use serde_json::{json, Value};

use crate::chain::{PassageSampler, TransitionKernel};
use crate::logspace::{fmt17, log1mexp, logaddexp, logsumexp, logsumexp_iter, NEG_INF};
use crate::momentfn::MomentFunction;
use crate::passage::{convolve, first_passage_law, PassageLaw};
use crate::rng;
use crate::Result;

/// How [`f_moment`] turns sums into verdicts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MomentPolicy {
    /// Log-threshold for `Diverged`; `None` means `log f(1) + ln 1e6`.
    pub divergence_threshold: Option<f64>,
    /// Refuse windowed growth estimates for functions without a registered bound.
    pub require_cert: bool,
    /// Window over which such an estimate is taken.
    pub window: u64,
}

impl Default for MomentPolicy {
    fn default() -> Self {
        Self {
            divergence_threshold: None,
            require_cert: true,
            window: 100,
        }
    }
}

impl MomentPolicy {
    pub fn threshold_for(&self, f: &MomentFunction) -> f64 {
        self.divergence_threshold
            .unwrap_or_else(|| f.log_eval(1) + 1e6f64.ln())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MomentVerdict {
    /// `E f(T)` lies in `[exp(lo), exp(hi)]`.
    Converged {
        lo: f64,
        hi: f64,
    },
    /// The partial sum alone exceeds `exp(threshold)`.
    Diverged {
        threshold: f64,
    },
    Inconclusive,
}

impl MomentVerdict {
    pub fn label(&self) -> &'static str {
        match self {
            MomentVerdict::Converged { .. } => "converged",
            MomentVerdict::Diverged { .. } => "diverged",
            MomentVerdict::Inconclusive => "inconclusive",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MomentEstimate {
    /// `ln sum_{n <= N} f(n) P(T = n)`.
    pub log_partial_sum: f64,
    /// `ln` of a certified bound on `sum_{n > N} f(n) P(T = n)`; `-inf` when the law is complete.
    pub log_tail_bound: Option<f64>,
    pub verdict: MomentVerdict,
    pub horizon: u64,
}

/// Finite floats as numbers, the rest as strings such as `"-inf"`.
pub fn json_f64(x: f64) -> Value {
    if x.is_finite() {
        json!(x)
    } else {
        Value::String(fmt17(x))
    }
}

impl MomentEstimate {
    /// Upper end of the interval, when a tail bound exists.
    pub fn log_upper(&self) -> Option<f64> {
        self.log_tail_bound
            .map(|t| logaddexp(self.log_partial_sum, t))
    }

    pub fn to_json(&self) -> Value {
        let mut v = json!({
            "log_partial_sum": json_f64(self.log_partial_sum),
            "log_tail_bound": self.log_tail_bound.map_or(Value::Null, json_f64),
            "verdict": self.verdict.label(),
            "N": self.horizon,
        });
        match self.verdict {
            MomentVerdict::Converged { lo, hi } => {
                v["interval"] = json!([json_f64(lo), json_f64(hi)]);
            }
            MomentVerdict::Diverged { threshold } => v["threshold"] = json_f64(threshold),
            MomentVerdict::Inconclusive => {}
        }
        v
    }
}

/// `ln sup_{n >= from} f(n+1)/f(n)`: the registered bound, else (unless
/// certificates are required) the largest step on `[from, from + window]`.
fn growth_factor(f: &MomentFunction, from: u64, policy: &MomentPolicy) -> Option<f64> {
    if let Some(g) = f.log_growth_bound(from) {
        return Some(g);
    }
    if policy.require_cert || policy.window == 0 {
        return None;
    }
    (from..from + policy.window)
        .map(|n| f.log_eval(n + 1) - f.log_eval(n))
        .reduce(f64::max)
}

/// `E f(T)` over the resolved part of the law, plus a tail bound when the law
/// carries a certificate: with `P(T > N + j) <= C rho^j P(T > N)` and
/// `f(n + 1) <= gamma f(n)` beyond `N`,
/// `sum_{n > N} f(n) P(T = n) <= C f(N) P(T > N) gamma / (1 - gamma rho)`,
/// where `C = rho^-(period - 1)`.
pub fn f_moment(law: &PassageLaw, f: &MomentFunction, policy: &MomentPolicy) -> MomentEstimate {
    let horizon = law.horizon();
    let log_partial_sum = logsumexp_iter(
        law.support()
            .map(|(n, lp)| lp + f.log_eval(n))
            .collect::<Vec<_>>(),
    );
    let log_tail_bound = if law.log_tail_mass() == NEG_INF {
        Some(NEG_INF)
    } else {
        law.tail_cert().filter(|c| c.n0 <= horizon).and_then(|c| {
            let lg = growth_factor(f, horizon, policy)?;
            let l_gr = lg + c.rho.ln();
            (l_gr < 0.0).then(|| {
                c.log_prefactor() + f.log_eval(horizon.max(1)) + law.log_tail_mass() + lg
                    - log1mexp(l_gr)
            })
        })
    };
    let threshold = policy.threshold_for(f);
    let verdict = match log_tail_bound {
        Some(t) => MomentVerdict::Converged {
            lo: log_partial_sum,
            hi: logaddexp(log_partial_sum, t),
        },
        None if log_partial_sum > threshold => MomentVerdict::Diverged { threshold },
        None => MomentVerdict::Inconclusive,
    };
    MomentEstimate {
        log_partial_sum,
        log_tail_bound,
        verdict,
        horizon,
    }
}

/// [`f_moment`] of `T_ij`, doubling the horizon from `horizon` until the
/// estimate is `Converged` with `ln hi - ln lo <= max_log_width`, or until
/// `max_horizon` is reached (the last estimate is returned either way).
///
/// Slowly mixing chains can have a certified tail with `rho` so close to 1
/// that `gamma rho >= 1` at a short horizon, or a bound that is valid but
/// loose; since `gamma -> 1` for subexponential `f`, a longer horizon
/// tightens it. A threshold crossing does not stop the doubling: a longer
/// horizon may still certify a finite value.
#[allow(clippy::too_many_arguments)]
pub fn passage_f_moment(
    kernel: &TransitionKernel,
    i: usize,
    j: usize,
    f: &MomentFunction,
    policy: &MomentPolicy,
    horizon: usize,
    max_horizon: usize,
    max_log_width: f64,
) -> Result<MomentEstimate> {
    let mut h = horizon;
    loop {
        let est = f_moment(&first_passage_law(kernel, i, j, h)?, f, policy);
        let tight =
            matches!(est.verdict, MomentVerdict::Converged { lo, hi } if hi - lo <= max_log_width);
        if tight || h >= max_horizon {
            return Ok(est);
        }
        h = (h * 2).min(max_horizon);
    }
}

/// Accumulated lower-bound series.
#[derive(Debug, Clone, PartialEq)]
pub struct SeriesReport {
    /// `(k, log_term, log_partial_sum)`, `k` from 1.
    pub trace: Vec<(u64, f64, f64)>,
    pub threshold: f64,
    /// First `k` whose partial sum exceeds the threshold.
    pub crossed_at: Option<u64>,
}

impl SeriesReport {
    pub fn verdict(&self) -> MomentVerdict {
        match self.crossed_at {
            Some(_) => MomentVerdict::Diverged {
                threshold: self.threshold,
            },
            None => MomentVerdict::Inconclusive,
        }
    }

    pub fn log_partial_sum(&self) -> f64 {
        self.trace.last().map_or(NEG_INF, |t| t.2)
    }

    /// Trace as CSV `k,log_term,log_partial_sum`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("k,log_term,log_partial_sum\n");
        for (k, t, s) in &self.trace {
            out.push_str(&format!("{k},{},{}\n", fmt17(*t), fmt17(*s)));
        }
        out
    }
}

/// Sums non-negative terms given as logs until the iterator ends; `Diverged`
/// once the running sum exceeds `exp(threshold)`.
pub fn lower_bound_series(terms: impl IntoIterator<Item = f64>, threshold: f64) -> SeriesReport {
    run_series(terms, threshold, false)
}

/// Like [`lower_bound_series`] but stops at the first crossing, so `terms`
/// may be infinite.
pub fn lower_bound_series_until(
    terms: impl IntoIterator<Item = f64>,
    threshold: f64,
) -> SeriesReport {
    run_series(terms, threshold, true)
}

fn run_series(terms: impl IntoIterator<Item = f64>, threshold: f64, stop: bool) -> SeriesReport {
    let mut acc = NEG_INF;
    let mut trace = Vec::new();
    let mut crossed_at = None;
    for (k, t) in (1u64..).zip(terms) {
        acc = logaddexp(acc, t);
        trace.push((k, t, acc));
        if crossed_at.is_none() && acc > threshold {
            crossed_at = Some(k);
            if stop {
                break;
            }
        }
    }
    SeriesReport {
        trace,
        threshold,
        crossed_at,
    }
}

/// Monte Carlo `E f(T)` with censoring at a cap.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McEstimate {
    /// `ln` of the sample mean of `f(min(T, cap))`.
    pub mean_log_f: f64,
    /// Standard error of `mean_log_f` (delta method).
    pub std_err: f64,
    pub censored_fraction: f64,
    pub n_samples: u64,
}

impl McEstimate {
    pub fn mean(&self) -> f64 {
        self.mean_log_f.exp()
    }

    /// Standard error of the linear-scale mean.
    pub fn std_err_linear(&self) -> f64 {
        self.std_err * self.mean()
    }

    pub fn to_json(&self) -> Value {
        json!({
            "mean_log_f": json_f64(self.mean_log_f),
            "std_err": json_f64(self.std_err),
            "censored_fraction": self.censored_fraction,
            "n_samples": self.n_samples,
        })
    }
}

const MC_CHUNK: u64 = 4096;

/// Sums of `e^{l - shift}` and `e^{2(l - shift)}` over a chunk.
#[derive(Debug, Clone, Copy)]
struct Moments {
    shift: f64,
    s1: f64,
    s2: f64,
    censored: u64,
}

impl Moments {
    fn rescale(&self, shift: f64) -> (f64, f64) {
        if self.s1 == 0.0 {
            return (0.0, 0.0);
        }
        let d = self.shift - shift;
        (self.s1 * d.exp(), self.s2 * (2.0 * d).exp())
    }

    fn merge(self, other: Self) -> Self {
        let shift = self.shift.max(other.shift);
        let (a1, a2) = self.rescale(shift);
        let (b1, b2) = other.rescale(shift);
        Moments {
            shift,
            s1: a1 + b1,
            s2: a2 + b2,
            censored: self.censored + other.censored,
        }
    }
}

/// Mean of `f(min(T, cap))` over `n_samples` draws. Censored draws count as
/// `f(cap)`, so for non-decreasing `f` the mean is a lower bound on `E f(T)`.
/// Chunks of draws use independent seeded streams and are reduced in order,
/// so results do not depend on the thread count.
pub fn mc_f_moment(
    sampler: &dyn PassageSampler,
    f: &MomentFunction,
    n_samples: u64,
    cap: u64,
    seed: u64,
) -> Result<McEstimate> {
    if n_samples == 0 || cap == 0 {
        return Err(crate::Error::InvalidParameter(
            "need n_samples >= 1 and cap >= 1".into(),
        ));
    }
    let chunks = n_samples.div_ceil(MC_CHUNK);
    let parts: Vec<Moments> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = rng::stream(seed, c);
            let count = MC_CHUNK.min(n_samples - c * MC_CHUNK);
            let mut logs = Vec::with_capacity(count as usize);
            let mut censored = 0;
            for _ in 0..count {
                let s = sampler.sample_with(&mut rng, cap);
                censored += s.is_censored() as u64;
                logs.push(f.log_eval(s.time_or_cap().max(1)));
            }
            let shift = logs.iter().copied().fold(NEG_INF, f64::max);
            let (mut s1, mut s2) = (0.0, 0.0);
            for l in &logs {
                let e = (l - shift).exp();
                s1 += e;
                s2 += e * e;
            }
            Moments {
                shift,
                s1,
                s2,
                censored,
            }
        })
        .collect();
    let total = parts
        .into_iter()
        .reduce(Moments::merge)
        .expect("at least one chunk");
    let n = n_samples as f64;
    let (m1, m2) = (total.s1 / n, total.s2 / n);
    let var = (m2 - m1 * m1).max(0.0);
    let mean_log_f = total.shift + m1.ln();
    let std_err = (var / n).sqrt() / m1;
    Ok(McEstimate {
        mean_log_f,
        std_err,
        censored_fraction: total.censored as f64 / n,
        n_samples,
    })
}

/// `(m, (1/m) ln E f(U_1 + ... + U_m))` for i.i.d. copies of `u`, over the
/// resolved range of each sum. A finite-`m` diagnostic only.
pub fn compound_growth_curve(
    u: &PassageLaw,
    f: &MomentFunction,
    m_max: u64,
) -> Result<Vec<(u64, f64)>> {
    let mut sum = u.clone();
    let mut out = Vec::with_capacity(m_max as usize);
    for m in 1..=m_max {
        if m > 1 {
            sum = convolve(&sum, u)?;
        }
        let lp: Vec<f64> = sum.support().map(|(n, lp)| lp + f.log_eval(n)).collect();
        out.push((m, logsumexp(&lp) / m as f64));
    }
    Ok(out)
}
