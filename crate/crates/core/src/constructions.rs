//! Counterexamples showing that submultiplicativity and subexponential
//! growth are both needed.
//!
//! [`demo_sharp`] pairs a burst function with the petal chain: `E f(T_11)` is
//! finite while `E f(T_00)` is not. [`demo_exponential`] uses the two-state
//! chain with `f(n) = e^{delta n}`: `E f(T_00)` is finite while `E f(T_11)`
//! is not. Everything here lives in log space; `f(x_k)` overflows any float.

use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::logspace::{fmt17, logaddexp, logsumexp, NEG_INF};
use crate::momentfn::{log_grid, FnKind, MomentFunction};
use crate::moments::{
    f_moment, json_f64, lower_bound_series, lower_bound_series_until, MomentEstimate, MomentPolicy,
    MomentVerdict, SeriesReport,
};
use crate::passage::{mixture, AtomicDist, PassageLaw};

/// `f(x + y) > k^6 f(x) f(y)` at step `k`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairWitness {
    pub k: u64,
    pub x: u64,
    pub y: u64,
    /// `log f(x + y) - log f(x) - log f(y)`.
    pub log_ratio: f64,
}

fn required(k: u64) -> f64 {
    6.0 * (k as f64).ln()
}

/// Pairs `(x_k, y_k)`, strictly increasing in `k`, with log-ratio above
/// `6 ln k` for `k = 1..=k_max`.
///
/// Burst functions use the flat-region midpoints: burst `i` gives the exact
/// ratio `u_i - sum_{j<i} u_j` at every `x = y` in
/// `[(s_i + u_i) / 2, s_i]`, so step `k` takes the smallest burst whose
/// margin beats `6 ln k` and the next unused integer in its range, moving on
/// to a later burst only when that range is used up. Other functions are
/// searched on a log grid up to `budget`.
pub fn witness_search(f: &MomentFunction, k_max: u64, budget: u64) -> Result<Vec<PairWitness>> {
    match f.kind() {
        FnKind::Burst(s) => {
            let mut out: Vec<PairWitness> = Vec::with_capacity(k_max as usize);
            let mut i = 1usize;
            for k in 1..=k_max {
                let need = required(k);
                let prev = out.last().map_or(0, |w| w.x);
                loop {
                    let (Some((si, ui)), Some(margin)) = (s.burst(i), s.margin(i)) else {
                        return Err(Error::BudgetExhausted { k, needed: need });
                    };
                    let lo = (si + ui).div_ceil(2).max(prev + 1);
                    if margin as f64 > need && lo <= si && lo.saturating_mul(2) <= budget {
                        let exact = f.exact_burst_ratio(lo, lo).expect("burst");
                        debug_assert_eq!(exact, margin);
                        out.push(PairWitness {
                            k,
                            x: lo,
                            y: lo,
                            log_ratio: exact as f64,
                        });
                        break;
                    }
                    if lo.saturating_mul(2) > budget {
                        return Err(Error::BudgetExhausted { k, needed: need });
                    }
                    i += 1;
                }
            }
            Ok(out)
        }
        _ => {
            let grid = log_grid(budget.max(1));
            let mut out: Vec<PairWitness> = Vec::new();
            for k in 1..=k_max {
                let need = required(k) + 1e-9;
                let (px, py) = out.last().map_or((0, 0), |w| (w.x, w.y));
                let found = grid.iter().filter(|&&x| x > px).find_map(|&x| {
                    grid.iter()
                        .filter(|&&y| y > py)
                        .map(|&y| (y, f.log_ratio(x, y)))
                        .find(|(_, r)| *r > need)
                        .map(|(y, r)| PairWitness {
                            k,
                            x,
                            y,
                            log_ratio: r,
                        })
                });
                match found {
                    Some(w) => out.push(w),
                    None => return Err(Error::BudgetExhausted { k, needed: need }),
                }
            }
            Ok(out)
        }
    }
}

/// Two independent laws with finite `E f` but infinite `E f(U_1 + U_2)`
/// (in the limit of infinitely many witnesses):
/// `P(U_1 = x_k) = c_1 / (f(x_k) k^2)`, `P(U_2 = y_k) = c_2 / (f(y_k) k^2)`.
#[derive(Debug, Clone, PartialEq)]
pub struct HeavyTailPair {
    pub u1: AtomicDist,
    pub u2: AtomicDist,
    pub witnesses: Vec<PairWitness>,
    pub c1_log: f64,
    pub c2_log: f64,
}

pub fn heavy_tail_pair(f: &MomentFunction, witnesses: &[PairWitness]) -> Result<HeavyTailPair> {
    if witnesses.len() < 2 {
        return Err(Error::TooFewWitnesses(witnesses.len()));
    }
    if witnesses
        .windows(2)
        .any(|w| w[1].x <= w[0].x || w[1].y <= w[0].y)
    {
        return Err(Error::InvalidParameter(
            "witness sequences must be strictly increasing".into(),
        ));
    }
    let side = |pick: fn(&PairWitness) -> u64| -> Result<(AtomicDist, f64)> {
        let raw: Vec<f64> = witnesses
            .iter()
            .map(|w| -f.log_eval(pick(w)) - 2.0 * (w.k as f64).ln())
            .collect();
        let c_log = -logsumexp(&raw);
        let atoms = witnesses.iter().map(pick).collect();
        Ok((
            AtomicDist::new(atoms, raw.iter().map(|r| r + c_log).collect(), NEG_INF)?,
            c_log,
        ))
    };
    let (u1, c1_log) = side(|w| w.x)?;
    let (u2, c2_log) = side(|w| w.y)?;
    Ok(HeavyTailPair {
        u1,
        u2,
        witnesses: witnesses.to_vec(),
        c1_log,
        c2_log,
    })
}

impl HeavyTailPair {
    /// `ln E f(U_1) = c_1 + ln sum_k k^-2`.
    pub fn log_moment_u1(&self, f: &MomentFunction) -> f64 {
        logsumexp(
            &self
                .u1
                .iter()
                .map(|(x, lp)| lp + f.log_eval(x))
                .collect::<Vec<_>>(),
        )
    }

    pub fn log_moment_u2(&self, f: &MomentFunction) -> f64 {
        logsumexp(
            &self
                .u2
                .iter()
                .map(|(y, lp)| lp + f.log_eval(y))
                .collect::<Vec<_>>(),
        )
    }

    /// `ln(c pi^2 / 6)` for each marginal: the bound on `E f(U_i)` for any
    /// number of witnesses with the same constant.
    pub fn log_marginal_bounds(&self) -> (f64, f64) {
        let z = (std::f64::consts::PI.powi(2) / 6.0).ln();
        (self.c1_log + z, self.c2_log + z)
    }

    /// `ln f(x_k + y_k) P(U_1 = x_k) P(U_2 = y_k) = ratio_k + c_1 + c_2 - 4 ln k`,
    /// each at least `c_1 + c_2 + 2 ln k`.
    pub fn diagonal_log_terms(&self) -> Vec<f64> {
        self.witnesses
            .iter()
            .map(|w| w.log_ratio + self.c1_log + self.c2_log - 4.0 * (w.k as f64).ln())
            .collect()
    }
}

/// Outcome of a demonstration pipeline.
#[derive(Debug, Clone, PartialEq)]
pub struct DemoReport {
    pub name: &'static str,
    pub parameters: Vec<(&'static str, String)>,
    /// The moment that stays finite.
    pub finite_side: MomentEstimate,
    /// Lower-bound series for the moment that blows up.
    pub infinite_side: SeriesReport,
    pub witnesses: Vec<PairWitness>,
}

impl DemoReport {
    pub fn success(&self) -> bool {
        matches!(self.finite_side.verdict, MomentVerdict::Converged { .. })
            && matches!(self.infinite_side.verdict(), MomentVerdict::Diverged { .. })
    }

    pub fn to_json(&self) -> Value {
        let params: serde_json::Map<String, Value> = self
            .parameters
            .iter()
            .map(|(k, v)| (k.to_string(), Value::String(v.clone())))
            .collect();
        json!({
            "demo": self.name,
            "parameters": params,
            "finite_side": self.finite_side.to_json(),
            "infinite_side": {
                "verdict": self.infinite_side.verdict().label(),
                "threshold": json_f64(self.infinite_side.threshold),
                "crossed_at": self.infinite_side.crossed_at,
                "log_partial_sum": json_f64(self.infinite_side.log_partial_sum()),
                "terms": self.infinite_side.trace.len(),
            },
            "witnesses": self.witnesses.iter().map(|w| json!([w.k, w.x, w.y, json_f64(w.log_ratio)])).collect::<Vec<_>>(),
            "success": self.success(),
        })
    }

    pub fn text_summary(&self) -> String {
        let mut s = format!("demo {}\n", self.name);
        for (k, v) in &self.parameters {
            s.push_str(&format!("  {k} = {v}\n"));
        }
        let fs = &self.finite_side;
        s.push_str(&format!("finite side: {}\n", fs.verdict.label()));
        s.push_str(&format!(
            "  log partial sum = {}\n",
            fmt17(fs.log_partial_sum)
        ));
        if let Some(hi) = fs.log_upper() {
            s.push_str(&format!("  log upper bound = {}\n", fmt17(hi)));
        }
        let inf = &self.infinite_side;
        s.push_str(&format!("infinite side: {}\n", inf.verdict().label()));
        s.push_str(&format!("  threshold = {}\n", fmt17(inf.threshold)));
        s.push_str(&format!(
            "  log partial sum = {} after {} terms\n",
            fmt17(inf.log_partial_sum()),
            inf.trace.len()
        ));
        if let Some(k) = inf.crossed_at {
            s.push_str(&format!("  crossed at term {k}\n"));
        }
        s.push_str(&format!(
            "result: {}\n",
            if self.success() { "success" } else { "failure" }
        ));
        s
    }

    /// Partial-sum trace as CSV `k,log_term,log_partial_sum`.
    pub fn trace_csv(&self) -> String {
        self.infinite_side.to_csv()
    }
}

fn open_probability(p: f64) -> Result<()> {
    if p > 0.0 && p < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidProbability(p))
    }
}

/// Upper bound on the witness coordinates searched by [`demo_sharp`].
pub const DEFAULT_WITNESS_BUDGET: u64 = 1 << 40;

/// The petal chain built from a heavy-tail pair: hub 1 moves to exit 0 with
/// probability `p` (returning in 2 steps) and otherwise enters a left or
/// right petal of length `U_1` or `U_2`, each with probability `(1 - p) / 2`.
pub fn petal_return_law(pair: &HeavyTailPair, p: f64) -> Result<PassageLaw> {
    open_probability(p)?;
    let q = (1.0 - p) / 2.0;
    mixture(
        &[
            PassageLaw::point(2),
            pair.u1.clone().into(),
            pair.u2.clone().into(),
        ],
        &[p, q, q],
    )
}

/// `E f(T_11)` stays finite; the series for `E f(T_00)` along "left petal,
/// then right petal, then exit" crosses `threshold` (default
/// `log f(1) + ln 1e6`).
pub fn demo_sharp(
    f: &MomentFunction,
    p: f64,
    k_max: u64,
    threshold: Option<f64>,
) -> Result<DemoReport> {
    open_probability(p)?;
    let witnesses = witness_search(f, k_max, DEFAULT_WITNESS_BUDGET)?;
    let pair = heavy_tail_pair(f, &witnesses)?;
    let t11 = petal_return_law(&pair, p)?;
    let policy = MomentPolicy {
        divergence_threshold: threshold,
        ..MomentPolicy::default()
    };
    let finite_side = f_moment(&t11, f, &policy);
    let log_path = p.ln() + 2.0 * ((1.0 - p) / 2.0).ln();
    let terms: Vec<f64> = pair
        .diagonal_log_terms()
        .iter()
        .map(|t| t + log_path)
        .collect();
    let infinite_side = lower_bound_series(terms, policy.threshold_for(f));
    let (b1, b2) = pair.log_marginal_bounds();
    Ok(DemoReport {
        name: "sharp",
        parameters: vec![
            ("f", f.name().to_string()),
            ("p", fmt17(p)),
            ("k_max", k_max.to_string()),
            ("c1_log", fmt17(pair.c1_log)),
            ("c2_log", fmt17(pair.c2_log)),
            ("log_bound_u1", fmt17(b1)),
            ("log_bound_u2", fmt17(b2)),
        ],
        finite_side,
        infinite_side,
        witnesses,
    })
}

/// Hard cap on series terms for [`demo_exponential`].
pub const MAX_SERIES_TERMS: u64 = 10_000_000;

/// Two-state chain, `f(n) = e^{delta n}`: `E f(T_00) = (1 - p) f(1) + p f(2)`
/// exactly, while `sum_k e^{delta k} p (1 - p)^{k - 2}` for `E f(T_11)` has
/// term ratio `e^delta (1 - p)` and diverges only if that exceeds 1.
pub fn demo_exponential(delta: f64, p: f64, threshold: Option<f64>) -> Result<DemoReport> {
    open_probability(p)?;
    let f = crate::momentfn::exp_fn(delta)?;
    let log_ratio = delta + (-p).ln_1p();
    if log_ratio <= 0.0 {
        return Err(Error::Precondition(format!(
            "requires e^delta (1 - p) > 1, got e^{delta} * {} = {}; p must be small enough for the return-time tail to lose to f",
            1.0 - p,
            log_ratio.exp()
        )));
    }
    let finite = logaddexp((-p).ln_1p() + f.log_eval(1), p.ln() + f.log_eval(2));
    let finite_side = MomentEstimate {
        log_partial_sum: finite,
        log_tail_bound: Some(NEG_INF),
        verdict: MomentVerdict::Converged {
            lo: finite,
            hi: finite,
        },
        horizon: 2,
    };
    let threshold = threshold.unwrap_or_else(|| f.log_eval(1) + 1e6f64.ln());
    let (lp, lq) = (p.ln(), (-p).ln_1p());
    let terms = (2..MAX_SERIES_TERMS + 2).map(|k| delta * k as f64 + lp + (k - 2) as f64 * lq);
    let infinite_side = lower_bound_series_until(terms, threshold);
    Ok(DemoReport {
        name: "exponential",
        parameters: vec![
            ("delta", fmt17(delta)),
            ("p", fmt17(p)),
            ("term_ratio", fmt17(log_ratio.exp())),
        ],
        finite_side,
        infinite_side,
        witnesses: Vec::new(),
    })
}
