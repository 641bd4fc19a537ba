//! Sums, geometric compounds and mixtures of independent passage times.

use std::collections::BTreeMap;

use super::taboo::certify_tail;
use super::{AtomicDist, LawRepr, PassageLaw};
use crate::error::{Error, Result};
use crate::logspace::{log1mexp, logaddexp, logsumexp, logsumexp_iter, NEG_INF};

/// Sparse laws are never densified beyond this many points.
const MAX_DENSIFY: u64 = 1 << 24;

/// Pruning for sparse arithmetic.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SparseConfig {
    /// Products or geometric weights with log-mass below this are moved to the tail.
    pub log_mass_floor: f64,
}

impl Default for SparseConfig {
    fn default() -> Self {
        Self {
            log_mass_floor: -745.0,
        }
    }
}

/// Dense law with precomputed log-survival `S(m) = P(T > m)`, `m = 0..=H`.
struct DenseView {
    pmf: Vec<f64>,
    surv: Vec<f64>,
    complete: bool,
    kmin: usize,
}

impl DenseView {
    fn new(law: &PassageLaw) -> Self {
        let LawRepr::Dense(pmf) = law.repr() else {
            unreachable!("dense view of a sparse law")
        };
        let h = pmf.len();
        let mut surv = vec![NEG_INF; h + 1];
        surv[h] = law.log_tail_mass();
        for m in (0..h).rev() {
            surv[m] = logaddexp(surv[m + 1], pmf[m]);
        }
        let kmin = pmf
            .iter()
            .position(|lp| *lp > NEG_INF)
            .map_or(h + 1, |k| k + 1);
        Self {
            pmf: pmf.clone(),
            surv,
            complete: law.is_complete(),
            kmin,
        }
    }

    fn horizon(&self) -> usize {
        self.pmf.len()
    }

    #[inline]
    fn pmf(&self, n: usize) -> f64 {
        if n == 0 {
            return NEG_INF;
        }
        match self.pmf.get(n - 1) {
            Some(v) => *v,
            None => {
                debug_assert!(self.complete, "pmf queried beyond known range");
                NEG_INF
            }
        }
    }

    /// `S(m)`; negative `m` means certain survival.
    #[inline]
    fn surv(&self, m: i64) -> f64 {
        if m < 0 {
            return 0.0;
        }
        match self.surv.get(m as usize) {
            Some(v) => *v,
            None => {
                debug_assert!(self.complete, "survival queried beyond known range");
                NEG_INF
            }
        }
    }

    /// Largest `n` for which a sum with a partner of minimum `kmin_other` is exact.
    fn exact_limit(&self, kmin_other: usize) -> usize {
        if self.complete {
            usize::MAX
        } else {
            self.horizon() + kmin_other
        }
    }
}

fn densify(law: &PassageLaw, horizon: u64) -> Result<PassageLaw> {
    if law.is_dense() {
        return Ok(law.clone());
    }
    let h = horizon.min(law.horizon()).max(1);
    if h > MAX_DENSIFY {
        return Err(Error::InvalidParameter(format!(
            "sparse law with atoms up to {} is too spread to densify",
            law.horizon()
        )));
    }
    law.to_dense(h)
}

/// Horizon to which a sparse partner needs densifying for dense arithmetic.
fn partner_horizon(sparse: &PassageLaw, partner: &PassageLaw) -> u64 {
    if partner.is_complete() {
        sparse.horizon()
    } else {
        let kmin = sparse.support().next().map_or(1, |(n, _)| n);
        partner.horizon().saturating_add(kmin)
    }
}

/// Law of the sum of independent passage times, with default pruning.
pub fn convolve(a: &PassageLaw, b: &PassageLaw) -> Result<PassageLaw> {
    convolve_with(a, b, &SparseConfig::default())
}

pub fn convolve_with(a: &PassageLaw, b: &PassageLaw, cfg: &SparseConfig) -> Result<PassageLaw> {
    match (a.repr(), b.repr()) {
        (LawRepr::Sparse(x), LawRepr::Sparse(y)) => Ok(convolve_sparse(x, y, cfg, u64::MAX).into()),
        (LawRepr::Dense(_), LawRepr::Dense(_)) => Ok(convolve_dense(a, b)),
        (LawRepr::Sparse(_), LawRepr::Dense(_)) => {
            Ok(convolve_dense(&densify(a, partner_horizon(a, b))?, b))
        }
        (LawRepr::Dense(_), LawRepr::Sparse(_)) => {
            Ok(convolve_dense(a, &densify(b, partner_horizon(b, a))?))
        }
    }
}

fn convolve_dense(a: &PassageLaw, b: &PassageLaw) -> PassageLaw {
    let (a, b) = (DenseView::new(a), DenseView::new(b));
    let mut horizon = a.exact_limit(b.kmin).min(b.exact_limit(a.kmin));
    if a.complete && b.complete {
        horizon = a.horizon() + b.horizon();
    }
    let horizon = horizon.max(1);
    let mut pmf = vec![NEG_INF; horizon];
    let mut surv = vec![0.0; horizon + 1];
    let mut terms = Vec::with_capacity(horizon);
    for n in 1..=horizon {
        terms.clear();
        for k in a.kmin..=n.saturating_sub(b.kmin) {
            terms.push(a.pmf(k) + b.pmf(n - k));
        }
        pmf[n - 1] = logsumexp(&terms);
        // P(A + B > n) = sum_{k <= n - kmin_b} a(k) S_B(n - k) + S_A(n - kmin_b)
        terms.clear();
        for k in a.kmin..=n.saturating_sub(b.kmin) {
            terms.push(a.pmf(k) + b.surv((n - k) as i64));
        }
        terms.push(a.surv(n as i64 - b.kmin as i64));
        surv[n] = logsumexp(&terms);
    }
    let cert = certify_tail(&surv);
    PassageLaw::dense_unchecked(pmf, surv[horizon], cert)
}

/// `ln(1 - (1 - e^ta)(1 - e^tb))`: mass unassigned in either factor.
fn joint_tail(ta: f64, tb: f64) -> f64 {
    if ta == NEG_INF {
        return tb;
    }
    // rounding can leave a full tail a hair above ln 1
    if ta >= 0.0 {
        return 0.0;
    }
    logaddexp(ta, tb + log1mexp(ta))
}

fn collect_atoms(
    acc: BTreeMap<u64, Vec<f64>>,
    cfg: &SparseConfig,
    tail_terms: &mut Vec<f64>,
) -> (Vec<u64>, Vec<f64>) {
    let mut atoms = Vec::with_capacity(acc.len());
    let mut lps = Vec::with_capacity(acc.len());
    for (x, v) in acc {
        let lp = logsumexp(&v);
        if lp < cfg.log_mass_floor {
            tail_terms.push(lp);
        } else {
            atoms.push(x);
            lps.push(lp);
        }
    }
    (atoms, lps)
}

/// Atom cross product; atoms above `cap` go to the tail.
fn convolve_sparse(a: &AtomicDist, b: &AtomicDist, cfg: &SparseConfig, cap: u64) -> AtomicDist {
    let mut acc: BTreeMap<u64, Vec<f64>> = BTreeMap::new();
    let mut tail_terms = vec![joint_tail(a.log_tail(), b.log_tail())];
    for (x, lx) in a.iter() {
        for (y, ly) in b.iter() {
            let s = x.saturating_add(y);
            if s > cap {
                tail_terms.push(lx + ly);
            } else {
                acc.entry(s).or_default().push(lx + ly);
            }
        }
    }
    let (atoms, lps) = collect_atoms(acc, cfg, &mut tail_terms);
    AtomicDist::from_parts_unchecked(atoms, lps, logsumexp(&tail_terms).min(0.0))
}

/// Law of `sum_{r=1}^M U_r + V` with `P(M = m) = (1 - pi)^m pi`, `m >= 0`,
/// everything independent; `budget` is the largest `n` resolved.
pub fn geometric_compound(
    u: &PassageLaw,
    v: &PassageLaw,
    pi: f64,
    budget: u64,
) -> Result<PassageLaw> {
    geometric_compound_with(u, v, pi, budget, &SparseConfig::default())
}

/// Dense inputs use the renewal recursion for `W = sum U_r`
/// (`P(W = 0) = pi`, `P(W = n) = (1 - pi) sum_k u(k) P(W = n - k)`), exact up
/// to the horizon. Sparse inputs sum `pi (1 - pi)^m U^{*m} * V` term by term
/// until the remaining geometric mass drops below the floor.
pub fn geometric_compound_with(
    u: &PassageLaw,
    v: &PassageLaw,
    pi: f64,
    budget: u64,
    cfg: &SparseConfig,
) -> Result<PassageLaw> {
    if !(pi > 0.0 && pi <= 1.0) {
        return Err(Error::InvalidProbability(pi));
    }
    if budget < 1 {
        return Err(Error::HorizonTooSmall(0));
    }
    if pi == 1.0 {
        return Ok(v.clone());
    }
    match (u.repr(), v.repr()) {
        (LawRepr::Sparse(us), LawRepr::Sparse(vs)) => {
            Ok(compound_sparse(us, vs, pi, budget, cfg).into())
        }
        _ => compound_dense(&densify(u, budget)?, &densify(v, budget)?, pi, budget),
    }
}

fn compound_dense(u: &PassageLaw, v: &PassageLaw, pi: f64, budget: u64) -> Result<PassageLaw> {
    let (u, v) = (DenseView::new(u), DenseView::new(v));
    let lq = (-pi).ln_1p();
    let lpi = pi.ln();
    let mut horizon = budget.min(MAX_DENSIFY) as usize;
    if !u.complete {
        horizon = horizon.min(u.horizon() + v.kmin);
    }
    if !v.complete {
        horizon = horizon.min(v.horizon());
    }
    let horizon = horizon.max(1);
    // W and its survival on 0..=horizon - kmin_v
    let wmax = horizon.saturating_sub(v.kmin);
    let mut w = vec![NEG_INF; wmax + 1];
    let mut sw = vec![NEG_INF; wmax + 1];
    w[0] = lpi;
    let mut terms = Vec::with_capacity(horizon);
    for m in 0..=wmax {
        if m > 0 {
            terms.clear();
            for k in u.kmin..=m {
                terms.push(u.pmf(k) + w[m - k]);
            }
            w[m] = lq + logsumexp(&terms);
        }
        terms.clear();
        terms.push(u.surv(m as i64));
        for k in u.kmin..=m {
            terms.push(u.pmf(k) + sw[m - k]);
        }
        sw[m] = lq + logsumexp(&terms);
    }
    let sw_at = |m: i64| if m < 0 { 0.0 } else { sw[m as usize] };
    let mut pmf = vec![NEG_INF; horizon];
    let mut surv = vec![0.0; horizon + 1];
    for n in 1..=horizon {
        let top = n as i64 - v.kmin as i64;
        terms.clear();
        for x in 0..=top.max(-1) {
            terms.push(w[x as usize] + v.pmf(n - x as usize));
        }
        pmf[n - 1] = logsumexp(&terms);
        terms.clear();
        for x in 0..=top.max(-1) {
            terms.push(w[x as usize] + v.surv(n as i64 - x));
        }
        terms.push(sw_at(top));
        surv[n] = logsumexp(&terms);
    }
    let cert = certify_tail(&surv);
    Ok(PassageLaw::dense_unchecked(pmf, surv[horizon], cert))
}

fn compound_sparse(
    u: &AtomicDist,
    v: &AtomicDist,
    pi: f64,
    budget: u64,
    cfg: &SparseConfig,
) -> AtomicDist {
    let lq = (-pi).ln_1p();
    let umin = u.atoms().first().copied().unwrap_or(u64::MAX);
    let mut acc: BTreeMap<u64, Vec<f64>> = BTreeMap::new();
    let mut tail_terms = Vec::new();
    let mut cur = v.clone();
    let mut log_w = pi.ln();
    for m in 0u64.. {
        for (x, lp) in cur.iter() {
            if x <= budget {
                acc.entry(x).or_default().push(log_w + lp);
            } else {
                tail_terms.push(log_w + lp);
            }
        }
        tail_terms.push(log_w + cur.log_tail());
        // P(M > m)
        let remaining = (m + 1) as f64 * lq;
        let next_min = cur
            .atoms()
            .first()
            .copied()
            .unwrap_or(u64::MAX)
            .saturating_add(umin);
        if remaining < cfg.log_mass_floor || next_min > budget {
            tail_terms.push(remaining);
            break;
        }
        cur = convolve_sparse(&cur, u, cfg, budget);
        log_w += lq;
    }
    let (atoms, lps) = collect_atoms(acc, cfg, &mut tail_terms);
    AtomicDist::from_parts_unchecked(atoms, lps, logsumexp(&tail_terms))
}

/// Weighted mixture; weights must match the laws and sum to 1 within 1e-12.
pub fn mixture(laws: &[PassageLaw], weights: &[f64]) -> Result<PassageLaw> {
    let sum: f64 = weights.iter().sum();
    if laws.len() != weights.len()
        || laws.is_empty()
        || (sum - 1.0).abs() > 1e-12
        || weights.iter().any(|w| w.is_nan() || *w < 0.0)
    {
        return Err(Error::WeightMismatch {
            sum,
            weights: weights.len(),
            laws: laws.len(),
        });
    }
    let parts: Vec<(f64, &PassageLaw)> = weights
        .iter()
        .zip(laws)
        .filter(|(w, _)| **w > 0.0)
        .map(|(w, l)| (w.ln(), l))
        .collect();

    if parts.iter().all(|(_, l)| !l.is_dense()) {
        let mut acc: BTreeMap<u64, Vec<f64>> = BTreeMap::new();
        let mut tails = Vec::new();
        for (lw, law) in &parts {
            for (x, lp) in law.support() {
                acc.entry(x).or_default().push(lw + lp);
            }
            tails.push(lw + law.log_tail_mass());
        }
        let atoms: Vec<u64> = acc.keys().copied().collect();
        let lps: Vec<f64> = acc.values().map(|v| logsumexp(v)).collect();
        return Ok(AtomicDist::from_parts_unchecked(atoms, lps, logsumexp(&tails)).into());
    }

    let incomplete: Vec<u64> = parts
        .iter()
        .filter(|(_, l)| !l.is_complete())
        .map(|(_, l)| l.horizon())
        .collect();
    let horizon = match incomplete.iter().min() {
        Some(h) => *h,
        None => parts.iter().map(|(_, l)| l.horizon()).max().unwrap_or(1),
    }
    .max(1);
    let views: Vec<(f64, DenseView)> = parts
        .iter()
        .map(|(lw, l)| {
            Ok((
                *lw,
                DenseView::new(&densify(l, horizon)?.to_dense(horizon)?),
            ))
        })
        .collect::<Result<_>>()?;
    let h = horizon as usize;
    let pmf: Vec<f64> = (1..=h)
        .map(|n| {
            logsumexp_iter(
                views
                    .iter()
                    .map(|(lw, v)| lw + v.pmf(n))
                    .collect::<Vec<_>>(),
            )
        })
        .collect();
    let surv: Vec<f64> = (0..=h)
        .map(|m| {
            logsumexp_iter(
                views
                    .iter()
                    .map(|(lw, v)| lw + v.surv(m as i64))
                    .collect::<Vec<_>>(),
            )
        })
        .collect();
    let cert = certify_tail(&surv);
    Ok(PassageLaw::dense_unchecked(pmf, surv[h], cert))
}

/// Result of a first-order stochastic dominance check.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DominationReport {
    pub dominates: bool,
    /// `max_n (CDF_a(n) - CDF_b(n))`, floored at 0.
    pub max_cdf_violation: f64,
}

/// Whether `a` is stochastically larger than `b`: `CDF_a(n) <= CDF_b(n) + tol`
/// at every support point of either law.
pub fn stochastic_dominates(a: &PassageLaw, b: &PassageLaw, tol: f64) -> Result<DominationReport> {
    let limit = a.known_through().min(b.known_through());
    let mut points: Vec<u64> = a.support().chain(b.support()).map(|(n, _)| n).collect();
    points.sort_unstable();
    points.dedup();
    if let Some(&n) = points.iter().find(|&&n| n > limit) {
        let _ = n;
        return Err(Error::IncomparableHorizons(limit));
    }
    let (mut ia, mut ib) = (a.support().peekable(), b.support().peekable());
    let (mut ca, mut cb) = (0.0f64, 0.0f64);
    let mut worst = 0.0f64;
    for n in points {
        while let Some(&(m, lp)) = ia.peek() {
            if m > n {
                break;
            }
            ca += lp.exp();
            ia.next();
        }
        while let Some(&(m, lp)) = ib.peek() {
            if m > n {
                break;
            }
            cb += lp.exp();
            ib.next();
        }
        worst = worst.max(ca - cb);
    }
    Ok(DominationReport {
        dominates: worst <= tol,
        max_cdf_violation: worst,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chain::build_two_state;
    use crate::passage::first_passage_law;

    fn sparse(pairs: &[(u64, f64)]) -> PassageLaw {
        AtomicDist::from_probs(pairs).unwrap().into()
    }

    #[test]
    fn point_masses_add() {
        let r = convolve(&PassageLaw::point(2), &PassageLaw::point(3)).unwrap();
        assert_eq!(r.support().collect::<Vec<_>>(), vec![(5, 0.0)]);
        let r = convolve(&PassageLaw::dense_point(2), &PassageLaw::dense_point(3)).unwrap();
        assert_eq!(r.pmf(5), 1.0);
        assert!(r.is_complete());
    }

    #[test]
    fn uniform_pair_sum() {
        let u = sparse(&[(1, 0.5), (2, 0.5)]);
        let r = convolve(&u, &u).unwrap();
        let got: Vec<(u64, f64)> = r.support().map(|(n, lp)| (n, lp.exp())).collect();
        let want = [(2, 0.25), (3, 0.5), (4, 0.25)];
        for ((n, p), (m, q)) in got.iter().zip(want) {
            assert_eq!(*n, m);
            assert!((p - q).abs() < 1e-15);
        }
        let d = u.to_dense(2).unwrap();
        let r = convolve(&d, &d).unwrap();
        assert!((r.pmf(3) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn shift_of_geometric_return_law() {
        let t11 = first_passage_law(&build_two_state(0.5).unwrap(), 1, 1, 40).unwrap();
        let r = convolve(&t11, &PassageLaw::point(1)).unwrap();
        assert_eq!(r.horizon(), 41);
        for k in 3..=41u64 {
            assert!((r.pmf(k) - 0.5f64.powi(k as i32 - 2)).abs() < 1e-16, "{k}");
        }
        assert!((r.log_tail_mass() - t11.log_tail_mass()).abs() < 1e-12);
        assert!(r.mass_deviation() < 1e-12);
    }

    #[test]
    fn compound_of_unit_steps_is_geometric() {
        let one = PassageLaw::dense_point(1);
        let r = geometric_compound(&one, &one, 0.5, 50).unwrap();
        for k in 1..=50u64 {
            assert!((r.pmf(k) - 0.5f64.powi(k as i32)).abs() < 1e-16);
        }
        assert!((r.log_tail_mass() - 50.0 * 0.5f64.ln()).abs() < 1e-12);
        let s = geometric_compound(&PassageLaw::point(1), &PassageLaw::point(1), 0.5, 50).unwrap();
        for k in 1..=50u64 {
            assert!((s.pmf(k) - 0.5f64.powi(k as i32)).abs() < 1e-16);
        }
        assert!(s.mass_deviation() < 1e-12);
    }

    #[test]
    fn compound_with_certain_crossing_returns_v() {
        let v = sparse(&[(2, 0.3), (5, 0.7)]);
        let r = geometric_compound(&PassageLaw::point(4), &v, 1.0, 10).unwrap();
        assert_eq!(r, v);
        assert!(geometric_compound(&v, &v, 0.0, 10).is_err());
        assert!(geometric_compound(&v, &v, 1.5, 10).is_err());
    }

    #[test]
    fn mixture_examples() {
        let m = mixture(&[PassageLaw::point(2), PassageLaw::point(3)], &[0.5, 0.5]).unwrap();
        assert!((m.pmf(2) - 0.5).abs() < 1e-15 && (m.pmf(3) - 0.5).abs() < 1e-15);
        let law = sparse(&[(1, 0.2), (4, 0.8)]);
        assert_eq!(mixture(std::slice::from_ref(&law), &[1.0]).unwrap(), law);
        assert!(matches!(
            mixture(&[PassageLaw::point(2)], &[0.9]),
            Err(Error::WeightMismatch { .. })
        ));
        assert!(mixture(&[PassageLaw::point(2)], &[0.5, 0.5]).is_err());
    }

    #[test]
    fn dense_mixture_uses_shortest_incomplete_horizon() {
        let t11 = first_passage_law(&build_two_state(0.5).unwrap(), 1, 1, 30).unwrap();
        let m = mixture(&[t11.clone(), PassageLaw::point(2)], &[0.5, 0.5]).unwrap();
        assert_eq!(m.horizon(), 30);
        assert!((m.pmf(2) - 0.75).abs() < 1e-15);
        assert!(m.mass_deviation() < 1e-12);
    }

    #[test]
    fn domination_examples() {
        let r = stochastic_dominates(&PassageLaw::point(3), &PassageLaw::point(2), 0.0).unwrap();
        assert!(r.dominates);
        let r = stochastic_dominates(&PassageLaw::point(2), &PassageLaw::point(3), 0.0).unwrap();
        assert!(!r.dominates && r.max_cdf_violation == 1.0);
        let law = sparse(&[(1, 0.2), (4, 0.8)]);
        let r = stochastic_dominates(&law, &law, 0.0).unwrap();
        assert!(r.dominates && r.max_cdf_violation == 0.0);
    }

    #[test]
    fn domination_needs_comparable_horizons() {
        let k = build_two_state(0.5).unwrap();
        let a = first_passage_law(&k, 1, 1, 20).unwrap();
        let b = first_passage_law(&k, 1, 1, 30).unwrap();
        assert!(matches!(
            stochastic_dominates(&a, &b, 1e-10),
            Err(Error::IncomparableHorizons(20))
        ));
        assert!(stochastic_dominates(&b, &b, 0.0).unwrap().dominates);
    }

    #[test]
    fn sparse_pruning_moves_mass_to_tail() {
        let cfg = SparseConfig {
            log_mass_floor: -10.0,
        };
        let a = AtomicDist::new(
            vec![1, 2],
            vec![(1.0 - 1e-3f64).ln(), 1e-3f64.ln()],
            NEG_INF,
        )
        .unwrap();
        let r = convolve_sparse(&a, &a, &cfg, u64::MAX);
        assert_eq!(r.atoms(), &[2, 3]);
        assert!((r.log_tail().exp() - 1e-6).abs() < 1e-18);
        let total = logaddexp(logsumexp(r.log_probs()), r.log_tail());
        assert!(total.abs() < 1e-14);
    }

    #[test]
    fn sparse_compound_with_most_mass_past_the_budget() {
        // the partial sums leave the budget fast, so their tails approach 1
        let u = sparse(&[(1, 0.06), (3, 0.594), (6, 0.346)]);
        let law = geometric_compound(&u, &PassageLaw::point(1), 0.05, 50).unwrap();
        assert!(law.log_tail_mass().is_finite());
        assert!(law.mass_deviation() < 1e-12);
        assert!(joint_tail(1e-16, -1.0) == 0.0);
    }
}
