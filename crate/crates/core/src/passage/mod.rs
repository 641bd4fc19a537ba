//! Passage-time laws.
//!
//! A [`PassageLaw`] is the distribution of a positive integer time `T`, held
//! either densely (log-pmf for `n = 1..=horizon`) or sparsely (an
//! [`AtomicDist`]). Mass that was not resolved, because it lies beyond the
//! horizon or was pruned, is kept as `log_tail_mass` and never dropped.

mod calculus;
mod csv;
mod taboo;

pub use calculus::{
    convolve, convolve_with, geometric_compound, geometric_compound_with, mixture,
    stochastic_dominates, DominationReport, SparseConfig,
};
pub use taboo::{
    conditioned_hit_law, conditioned_return_law, crossing_return_law, first_passage_law,
    hit_before_return_prob,
};

use crate::error::{Error, Result};
use crate::logspace::{logaddexp, logsumexp, logsumexp_iter, NEG_INF};

/// Tolerance for `total mass + tail mass = 1` checks.
pub const MASS_TOL: f64 = 1e-10;

/// A distribution on `{1, 2, ...}` given by finitely many atoms in log space.
#[derive(Debug, Clone, PartialEq)]
pub struct AtomicDist {
    atoms: Vec<u64>,
    log_probs: Vec<f64>,
    log_tail: f64,
}

impl AtomicDist {
    /// Atoms must be strictly increasing and `>= 1`; `logsumexp(log_probs, log_tail)`
    /// must be 0 within [`MASS_TOL`].
    pub fn new(atoms: Vec<u64>, log_probs: Vec<f64>, log_tail: f64) -> Result<Self> {
        let d = Self::from_parts_unchecked(atoms, log_probs, log_tail);
        d.check()?;
        Ok(d)
    }

    pub(crate) fn from_parts_unchecked(
        atoms: Vec<u64>,
        log_probs: Vec<f64>,
        log_tail: f64,
    ) -> Self {
        Self {
            atoms,
            log_probs,
            log_tail,
        }
    }

    /// Builds from linear-space `(atom, probability)` pairs. Pairs may come in
    /// any order but atoms must be distinct.
    pub fn from_probs(pairs: &[(u64, f64)]) -> Result<Self> {
        let mut v: Vec<(u64, f64)> = pairs.to_vec();
        v.sort_by_key(|&(a, _)| a);
        if v.iter().any(|&(_, p)| !(p > 0.0 && p <= 1.0)) {
            return Err(Error::InvalidParameter(
                "atom probabilities must lie in (0, 1]".into(),
            ));
        }
        let (atoms, log_probs) = v.into_iter().map(|(a, p)| (a, p.ln())).unzip();
        Self::new(atoms, log_probs, NEG_INF)
    }

    pub fn point(x: u64) -> Self {
        assert!(x >= 1, "passage times are positive");
        Self {
            atoms: vec![x],
            log_probs: vec![0.0],
            log_tail: NEG_INF,
        }
    }

    fn check(&self) -> Result<()> {
        if self.atoms.len() != self.log_probs.len() {
            return Err(Error::InvalidParameter(
                "atoms and log_probs differ in length".into(),
            ));
        }
        if self.atoms.is_empty() && self.log_tail == NEG_INF {
            return Err(Error::EmptySupport);
        }
        if self.atoms.first().is_some_and(|&a| a == 0) {
            return Err(Error::InvalidParameter("atoms must be >= 1".into()));
        }
        if self.atoms.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidParameter(
                "atoms must be strictly increasing".into(),
            ));
        }
        if self.log_probs.iter().any(|lp| lp.is_nan() || *lp > 1e-12) {
            return Err(Error::InvalidParameter(
                "log-probabilities must be <= 0".into(),
            ));
        }
        let total = logaddexp(logsumexp(&self.log_probs), self.log_tail);
        if total.abs() > MASS_TOL {
            return Err(Error::InvalidParameter(format!(
                "total log-mass {total:e} is not 0 within {MASS_TOL:e}"
            )));
        }
        Ok(())
    }

    pub fn atoms(&self) -> &[u64] {
        &self.atoms
    }

    pub fn log_probs(&self) -> &[f64] {
        &self.log_probs
    }

    pub fn log_tail(&self) -> f64 {
        self.log_tail
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (u64, f64)> + '_ {
        self.atoms
            .iter()
            .copied()
            .zip(self.log_probs.iter().copied())
    }

    /// Linear weights of the atoms renormalized to sum to 1 (unassigned mass dropped).
    pub fn normalized_weights(&self) -> Vec<f64> {
        let z = logsumexp(&self.log_probs);
        self.log_probs.iter().map(|lp| (lp - z).exp()).collect()
    }

    /// Keeps the `max_atoms` atoms of largest mass (ties favour the smaller
    /// atom) and renormalizes them to a complete distribution.
    pub fn truncate_renormalized(&self, max_atoms: usize) -> Result<Self> {
        if self.atoms.is_empty() || max_atoms == 0 {
            return Err(Error::EmptySupport);
        }
        let mut order: Vec<usize> = (0..self.atoms.len()).collect();
        order.sort_by(|&a, &b| {
            self.log_probs[b]
                .total_cmp(&self.log_probs[a])
                .then(self.atoms[a].cmp(&self.atoms[b]))
        });
        order.truncate(max_atoms);
        order.sort_unstable();
        let kept: Vec<f64> = order.iter().map(|&k| self.log_probs[k]).collect();
        let z = logsumexp(&kept);
        Ok(Self {
            atoms: order.iter().map(|&k| self.atoms[k]).collect(),
            log_probs: kept.iter().map(|lp| lp - z).collect(),
            log_tail: NEG_INF,
        })
    }
}

/// Certificate that `P(T > n + period) <= rho^period P(T > n)` for every
/// `n >= n0`. With `period = 1` this is the plain one-step ratio bound.
///
/// Since the survival function is non-increasing, a period-`d` certificate
/// gives `P(T > n0 + j) <= rho^(j - d + 1) P(T > n0)` for all `j >= 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TailCert {
    pub n0: u64,
    pub rho: f64,
    pub period: u64,
}

impl TailCert {
    /// `ln` of the prefactor `rho^-(period - 1)` in the one-step envelope.
    pub fn log_prefactor(&self) -> f64 {
        -((self.period.max(1) - 1) as f64) * self.rho.ln()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum LawRepr {
    /// `log_pmf[k]` is `ln P(T = k + 1)`.
    Dense(Vec<f64>),
    /// Invariant: the inner distribution's `log_tail` equals the law's tail.
    Sparse(AtomicDist),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PassageLaw {
    repr: LawRepr,
    log_tail_mass: f64,
    tail_cert: Option<TailCert>,
}

impl From<AtomicDist> for PassageLaw {
    fn from(d: AtomicDist) -> Self {
        let log_tail_mass = d.log_tail;
        Self {
            repr: LawRepr::Sparse(d),
            log_tail_mass,
            tail_cert: None,
        }
    }
}

impl PassageLaw {
    /// Dense law with a mass check.
    pub fn dense(
        log_pmf: Vec<f64>,
        log_tail_mass: f64,
        tail_cert: Option<TailCert>,
    ) -> Result<Self> {
        if log_pmf.is_empty() {
            return Err(Error::HorizonTooSmall(0));
        }
        if let Some(c) = tail_cert {
            if !(c.rho > 0.0 && c.rho < 1.0) {
                return Err(Error::InvalidParameter(format!(
                    "certificate ratio {} outside (0,1)",
                    c.rho
                )));
            }
            if c.period == 0 {
                return Err(Error::InvalidParameter(
                    "certificate period must be at least 1".into(),
                ));
            }
        }
        let law = Self::dense_unchecked(log_pmf, log_tail_mass, tail_cert);
        let dev = law.mass_deviation();
        if dev > MASS_TOL {
            return Err(Error::InvalidParameter(format!(
                "law mass deviates from 1 by {dev:e}"
            )));
        }
        Ok(law)
    }

    pub(crate) fn dense_unchecked(
        log_pmf: Vec<f64>,
        log_tail_mass: f64,
        tail_cert: Option<TailCert>,
    ) -> Self {
        Self {
            repr: LawRepr::Dense(log_pmf),
            log_tail_mass,
            tail_cert,
        }
    }

    pub fn point(x: u64) -> Self {
        AtomicDist::point(x).into()
    }

    /// Dense point mass at `x` (horizon `x`, no tail).
    pub fn dense_point(x: u64) -> Self {
        assert!(x >= 1);
        let mut v = vec![NEG_INF; x as usize];
        v[x as usize - 1] = 0.0;
        Self::dense_unchecked(v, NEG_INF, None)
    }

    pub fn repr(&self) -> &LawRepr {
        &self.repr
    }

    pub fn is_dense(&self) -> bool {
        matches!(self.repr, LawRepr::Dense(_))
    }

    pub fn log_tail_mass(&self) -> f64 {
        self.log_tail_mass
    }

    pub fn tail_cert(&self) -> Option<TailCert> {
        self.tail_cert
    }

    /// No unresolved mass.
    pub fn is_complete(&self) -> bool {
        self.log_tail_mass == NEG_INF
    }

    /// Largest `n` at which the pmf is represented: the dense length, or the
    /// largest atom of a sparse law (0 if it has none).
    pub fn horizon(&self) -> u64 {
        match &self.repr {
            LawRepr::Dense(v) => v.len() as u64,
            LawRepr::Sparse(d) => d.atoms.last().copied().unwrap_or(0),
        }
    }

    /// Upper end of the range on which the law is fully known.
    pub(crate) fn known_through(&self) -> u64 {
        if self.is_complete() {
            u64::MAX
        } else {
            self.horizon()
        }
    }

    /// `(n, ln P(T = n))` over points of positive mass, increasing in `n`.
    pub fn support(&self) -> Box<dyn Iterator<Item = (u64, f64)> + '_> {
        match &self.repr {
            LawRepr::Dense(v) => Box::new(
                v.iter()
                    .enumerate()
                    .filter(|(_, lp)| **lp > NEG_INF)
                    .map(|(k, lp)| (k as u64 + 1, *lp)),
            ),
            LawRepr::Sparse(d) => Box::new(d.iter().filter(|(_, lp)| *lp > NEG_INF)),
        }
    }

    /// `ln P(T = n)`; `None` when `n` lies beyond the known range.
    pub fn log_pmf(&self, n: u64) -> Option<f64> {
        if n == 0 {
            return Some(NEG_INF);
        }
        match &self.repr {
            LawRepr::Dense(v) => match v.get(n as usize - 1) {
                Some(lp) => Some(*lp),
                None if self.is_complete() => Some(NEG_INF),
                None => None,
            },
            LawRepr::Sparse(d) => match d.atoms.binary_search(&n) {
                Ok(k) => Some(d.log_probs[k]),
                Err(_) if n <= self.known_through() => Some(NEG_INF),
                Err(_) => None,
            },
        }
    }

    /// Linear-space pmf at `n`, zero outside the known range.
    pub fn pmf(&self, n: u64) -> f64 {
        self.log_pmf(n).unwrap_or(NEG_INF).exp()
    }

    /// `ln P(T > n)` when known.
    pub fn log_survival(&self, n: u64) -> Option<f64> {
        if n > self.known_through() {
            return None;
        }
        let above = self.support().filter(|&(m, _)| m > n).map(|(_, lp)| lp);
        let s: Vec<f64> = above.collect();
        Some(logaddexp(logsumexp(&s), self.log_tail_mass))
    }

    /// `P(T <= n)` when known.
    pub fn cdf(&self, n: u64) -> Option<f64> {
        if n > self.known_through() {
            return None;
        }
        Some(
            self.support()
                .take_while(|&(m, _)| m <= n)
                .map(|(_, lp)| lp.exp())
                .sum(),
        )
    }

    /// Log of pmf mass plus tail mass.
    pub fn total_log_mass(&self) -> f64 {
        let pmf = logsumexp_iter(self.support().map(|(_, lp)| lp).collect::<Vec<_>>());
        logaddexp(pmf, self.log_tail_mass)
    }

    /// `|total mass - 1|` in linear space.
    pub fn mass_deviation(&self) -> f64 {
        self.total_log_mass().exp_m1().abs()
    }

    /// `E[T; T <= horizon]`, the mean restricted to the resolved support.
    pub fn truncated_mean(&self) -> f64 {
        self.support().map(|(n, lp)| n as f64 * lp.exp()).sum()
    }

    /// Dense view with pmf through `horizon`; mass beyond moves to the tail.
    /// Extending past the known range of an incomplete law is an error.
    pub fn to_dense(&self, horizon: u64) -> Result<Self> {
        if horizon == 0 {
            return Err(Error::HorizonTooSmall(0));
        }
        if horizon > self.known_through() && horizon > self.horizon() {
            return Err(Error::IncomparableHorizons(self.horizon()));
        }
        let mut v = vec![NEG_INF; horizon as usize];
        let mut beyond = Vec::new();
        for (n, lp) in self.support() {
            if n <= horizon {
                v[n as usize - 1] = lp;
            } else {
                beyond.push(lp);
            }
        }
        let tail = logaddexp(logsumexp(&beyond), self.log_tail_mass);
        Ok(Self::dense_unchecked(v, tail, self.tail_cert))
    }

    /// Sparse view over the support points.
    pub fn to_sparse(&self) -> AtomicDist {
        match &self.repr {
            LawRepr::Sparse(d) => d.clone(),
            LawRepr::Dense(_) => {
                let (atoms, log_probs) = self.support().unzip();
                AtomicDist::from_parts_unchecked(atoms, log_probs, self.log_tail_mass)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn atomic_dist_rejects_bad_input() {
        assert!(AtomicDist::new(vec![2, 2], vec![0.5f64.ln(); 2], NEG_INF).is_err());
        assert!(AtomicDist::new(vec![0], vec![0.0], NEG_INF).is_err());
        assert!(AtomicDist::new(vec![1, 2], vec![0.5f64.ln(), 0.4f64.ln()], NEG_INF).is_err());
        assert!(matches!(
            AtomicDist::new(vec![], vec![], NEG_INF),
            Err(Error::EmptySupport)
        ));
        assert!(AtomicDist::new(vec![1, 2], vec![0.5f64.ln(), 0.4f64.ln()], 0.1f64.ln()).is_ok());
    }

    #[test]
    fn truncation_keeps_heaviest_atoms() {
        let d = AtomicDist::from_probs(&[(1, 0.1), (2, 0.4), (3, 0.2), (7, 0.3)]).unwrap();
        let t = d.truncate_renormalized(2).unwrap();
        assert_eq!(t.atoms(), &[2, 7]);
        let w = t.normalized_weights();
        assert!((w[0] - 4.0 / 7.0).abs() < 1e-15 && (w[1] - 3.0 / 7.0).abs() < 1e-15);
    }

    #[test]
    fn dense_views_and_survival() {
        let law = PassageLaw::dense(vec![0.5f64.ln(), 0.25f64.ln()], 0.25f64.ln(), None).unwrap();
        assert_eq!(law.horizon(), 2);
        assert!((law.log_survival(1).unwrap().exp() - 0.5).abs() < 1e-15);
        assert!((law.log_survival(2).unwrap().exp() - 0.25).abs() < 1e-15);
        assert_eq!(law.log_survival(3), None);
        assert_eq!(law.cdf(3), None);
        assert!((law.cdf(2).unwrap() - 0.75).abs() < 1e-15);
        let short = law.to_dense(1).unwrap();
        assert!((short.log_tail_mass().exp() - 0.5).abs() < 1e-15);
        assert!(law.to_dense(3).is_err());
    }

    #[test]
    fn complete_sparse_law_is_known_everywhere() {
        let law = PassageLaw::point(3);
        assert_eq!(law.log_pmf(10), Some(NEG_INF));
        assert_eq!(law.cdf(100), Some(1.0));
        let d = law.to_dense(5).unwrap();
        assert_eq!(d.pmf(3), 1.0);
        assert!(d.is_complete());
    }
}
