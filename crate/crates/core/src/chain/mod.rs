//! Finite transition kernels and the parametric chain families.

mod families;
mod sample;

pub use families::{
    build_petal_chain, build_two_state, random_irreducible_kernel, ParametricChain,
};
pub use sample::{
    sample_passage, ChainRef, KernelSampler, PassageSampler, PassageTime, PetalSampler,
    TrajectorySample,
};

use std::collections::HashMap;
use std::fmt;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row sums must equal 1 within this tolerance.
pub const ROW_SUM_TOL: f64 = 1e-12;

/// Sparse row-stochastic matrix over named states.
#[derive(Debug, Clone)]
pub struct TransitionKernel {
    states: Vec<String>,
    rows: Vec<Vec<(usize, f64)>>,
    index: HashMap<String, usize>,
    validated: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    Empty,
    DuplicateState(String),
    RowCount {
        states: usize,
        rows: usize,
    },
    BadTarget {
        state: String,
        target: usize,
    },
    DuplicateTarget {
        state: String,
        target: String,
    },
    BadProbability {
        state: String,
        target: String,
        p: f64,
    },
    RowSum {
        state: String,
        sum: f64,
    },
    NotIrreducible {
        unreachable_from: String,
        missing: Vec<String>,
    },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::Empty => write!(f, "kernel has no states"),
            Violation::DuplicateState(s) => write!(f, "state `{s}` listed twice"),
            Violation::RowCount { states, rows } => {
                write!(f, "{states} states but {rows} rows")
            }
            Violation::BadTarget { state, target } => {
                write!(f, "row `{state}` targets nonexistent index {target}")
            }
            Violation::DuplicateTarget { state, target } => {
                write!(f, "row `{state}` lists target `{target}` twice")
            }
            Violation::BadProbability { state, target, p } => {
                write!(f, "p(`{state}` -> `{target}`) = {p} outside (0, 1]")
            }
            Violation::RowSum { state, sum } => {
                write!(
                    f,
                    "row `{state}` sums to {sum} (must be 1 within {ROW_SUM_TOL:e})"
                )
            }
            Violation::NotIrreducible {
                unreachable_from,
                missing,
            } => write!(
                f,
                "not irreducible: from `{unreachable_from}` cannot reach {}",
                missing
                    .iter()
                    .map(|s| format!("`{s}`"))
                    .collect::<Vec<_>>()
                    .join(", ")
            ),
        }
    }
}

/// Outcome of [`TransitionKernel::validate`]; empty iff the kernel is a
/// valid irreducible stochastic matrix.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn is_irreducible(&self) -> bool {
        !self
            .violations
            .iter()
            .any(|v| matches!(v, Violation::NotIrreducible { .. }))
    }

    pub fn row_sum_violations(&self) -> impl Iterator<Item = &Violation> {
        self.violations
            .iter()
            .filter(|v| matches!(v, Violation::RowSum { .. }))
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.violations.is_empty() {
            return write!(f, "valid irreducible kernel");
        }
        let msgs: Vec<String> = self.violations.iter().map(|v| v.to_string()).collect();
        write!(f, "{}", msgs.join("; "))
    }
}

#[derive(Serialize, Deserialize)]
struct KernelJson {
    states: Vec<String>,
    rows: Vec<Vec<(String, f64)>>,
}

impl TransitionKernel {
    /// Builds and validates a kernel.
    pub fn new(states: Vec<String>, rows: Vec<Vec<(usize, f64)>>) -> Result<Self> {
        let mut k = Self::new_unchecked(states, rows);
        let report = k.validate();
        if !report.is_valid() {
            return Err(Error::InvalidKernel(report.to_string()));
        }
        k.validated = true;
        Ok(k)
    }

    /// Builds without validation, e.g. to inspect a report on a bad kernel.
    pub fn new_unchecked(states: Vec<String>, rows: Vec<Vec<(usize, f64)>>) -> Self {
        let index = states
            .iter()
            .enumerate()
            .map(|(k, s)| (s.clone(), k))
            .collect();
        Self {
            states,
            rows,
            index,
            validated: false,
        }
    }

    /// Kernel with states named `"0"`, `"1"`, ...
    pub fn from_index_rows(rows: Vec<Vec<(usize, f64)>>) -> Result<Self> {
        let states = (0..rows.len()).map(|k| k.to_string()).collect();
        Self::new(states, rows)
    }

    pub fn validate(&self) -> ValidationReport {
        let mut v = Vec::new();
        let n = self.states.len();
        if n == 0 {
            v.push(Violation::Empty);
            return ValidationReport { violations: v };
        }
        if self.index.len() != n {
            let mut seen = HashMap::new();
            for s in &self.states {
                if seen.insert(s, ()).is_some() {
                    v.push(Violation::DuplicateState(s.clone()));
                }
            }
        }
        if self.rows.len() != n {
            v.push(Violation::RowCount {
                states: n,
                rows: self.rows.len(),
            });
            return ValidationReport { violations: v };
        }
        let mut structurally_ok = true;
        for (k, row) in self.rows.iter().enumerate() {
            let name = &self.states[k];
            let mut seen = vec![false; n];
            let mut sum = 0.0;
            for &(t, p) in row {
                if t >= n {
                    v.push(Violation::BadTarget {
                        state: name.clone(),
                        target: t,
                    });
                    structurally_ok = false;
                    continue;
                }
                if std::mem::replace(&mut seen[t], true) {
                    v.push(Violation::DuplicateTarget {
                        state: name.clone(),
                        target: self.states[t].clone(),
                    });
                }
                if !(p > 0.0 && p <= 1.0) {
                    v.push(Violation::BadProbability {
                        state: name.clone(),
                        target: self.states[t].clone(),
                        p,
                    });
                }
                sum += p;
            }
            if (sum - 1.0).abs() > ROW_SUM_TOL {
                v.push(Violation::RowSum {
                    state: name.clone(),
                    sum,
                });
            }
        }
        if structurally_ok {
            if let Some(bad) = self.irreducibility_violation() {
                v.push(bad);
            }
        }
        ValidationReport { violations: v }
    }

    fn irreducibility_violation(&self) -> Option<Violation> {
        let n = self.states.len();
        // strongly connected iff every state is reachable from 0 in the graph and its reverse
        let forward = self.reachable_from(0, None);
        let mut reverse = vec![Vec::new(); n];
        for (k, row) in self.rows.iter().enumerate() {
            for &(t, p) in row {
                if p > 0.0 {
                    reverse[t].push(k);
                }
            }
        }
        let mut back = vec![false; n];
        back[0] = true;
        let mut stack = vec![0];
        while let Some(k) = stack.pop() {
            for &s in &reverse[k] {
                if !std::mem::replace(&mut back[s], true) {
                    stack.push(s);
                }
            }
        }
        if let Some(m) = back.iter().position(|b| !b) {
            let missing_from = self.reachable_from(m, None);
            let missing = (0..n)
                .filter(|&t| !missing_from[t])
                .map(|t| self.states[t].clone())
                .collect();
            return Some(Violation::NotIrreducible {
                unreachable_from: self.states[m].clone(),
                missing,
            });
        }
        if forward.iter().any(|r| !r) {
            let missing = (0..n)
                .filter(|&t| !forward[t])
                .map(|t| self.states[t].clone())
                .collect();
            return Some(Violation::NotIrreducible {
                unreachable_from: self.states[0].clone(),
                missing,
            });
        }
        None
    }

    /// States reachable in one or more steps from `start` (and `start`
    /// itself), never passing through `avoid`.
    pub(crate) fn reachable_from(&self, start: usize, avoid: Option<usize>) -> Vec<bool> {
        let mut seen = vec![false; self.states.len()];
        seen[start] = true;
        let mut stack = vec![start];
        while let Some(k) = stack.pop() {
            for &(t, p) in &self.rows[k] {
                if p > 0.0 && Some(t) != avoid && !std::mem::replace(&mut seen[t], true) {
                    stack.push(t);
                }
            }
        }
        seen
    }

    pub fn ensure_valid(&self) -> Result<()> {
        if self.validated {
            return Ok(());
        }
        let report = self.validate();
        if report.is_valid() {
            Ok(())
        } else {
            Err(Error::InvalidKernel(report.to_string()))
        }
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn states(&self) -> &[String] {
        &self.states
    }

    pub fn rows(&self) -> &[Vec<(usize, f64)>] {
        &self.rows
    }

    pub fn row(&self, k: usize) -> &[(usize, f64)] {
        &self.rows[k]
    }

    pub fn state_name(&self, k: usize) -> &str {
        &self.states[k]
    }

    pub fn index_of(&self, name: &str) -> Result<usize> {
        self.index
            .get(name)
            .copied()
            .ok_or_else(|| Error::InvalidState(name.to_string()))
    }

    pub(crate) fn check_index(&self, k: usize) -> Result<()> {
        if k < self.states.len() {
            Ok(())
        } else {
            Err(Error::InvalidState(format!("#{k}")))
        }
    }

    /// `p(from, to)`, zero when the entry is absent.
    pub fn prob(&self, from: usize, to: usize) -> f64 {
        self.rows[from]
            .iter()
            .filter(|&&(t, _)| t == to)
            .map(|&(_, p)| p)
            .sum()
    }

    pub fn nnz(&self) -> usize {
        self.rows.iter().map(Vec::len).sum()
    }

    /// `x P` for a row vector `x`.
    pub fn left_mul(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.len()];
        for (k, row) in self.rows.iter().enumerate() {
            let xk = x[k];
            if xk == 0.0 {
                continue;
            }
            for &(t, p) in row {
                out[t] += xk * p;
            }
        }
        out
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let raw: KernelJson = serde_json::from_str(s)?;
        let index: HashMap<&str, usize> = raw
            .states
            .iter()
            .enumerate()
            .map(|(k, s)| (s.as_str(), k))
            .collect();
        let mut rows = Vec::with_capacity(raw.rows.len());
        for row in &raw.rows {
            let mut r = Vec::with_capacity(row.len());
            for (target, p) in row {
                let t = *index
                    .get(target.as_str())
                    .ok_or_else(|| Error::InvalidState(target.clone()))?;
                r.push((t, *p));
            }
            rows.push(r);
        }
        Self::new(raw.states, rows)
    }

    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_json_string(&self) -> String {
        let raw = KernelJson {
            states: self.states.clone(),
            rows: self
                .rows
                .iter()
                .map(|row| {
                    row.iter()
                        .map(|&(t, p)| (self.states[t].clone(), p))
                        .collect()
                })
                .collect(),
        };
        serde_json::to_string(&raw).expect("kernel serializes")
    }
}

/// Kernels up to this size are solved directly before iterating.
const DIRECT_SOLVE_MAX: usize = 2048;
const STATIONARY_MAX_ITERS: usize = 1_000_000;

/// Stationary distribution `pi` with `|| pi P - pi ||_1 < tol`.
///
/// Small kernels are solved directly (one balance equation replaced by the
/// normalization); the result, or the uniform vector for large kernels, is
/// then refined by iterating the lazy kernel `(I + P) / 2`, which has the
/// same stationary law and is aperiodic.
pub fn stationary_distribution(kernel: &TransitionKernel, tol: f64) -> Result<Vec<f64>> {
    kernel.ensure_valid()?;
    let n = kernel.len();
    let mut pi = if n <= DIRECT_SOLVE_MAX {
        direct_stationary(kernel).unwrap_or_else(|| vec![1.0 / n as f64; n])
    } else {
        vec![1.0 / n as f64; n]
    };
    let mut residual = stationary_residual(kernel, &pi);
    let mut iters = 0;
    while residual >= tol {
        if iters >= STATIONARY_MAX_ITERS {
            return Err(Error::NotConverged {
                iterations: iters,
                residual,
            });
        }
        let next = kernel.left_mul(&pi);
        for (a, b) in pi.iter_mut().zip(&next) {
            *a = 0.5 * (*a + b);
        }
        let z: f64 = pi.iter().sum();
        pi.iter_mut().for_each(|x| *x /= z);
        residual = stationary_residual(kernel, &pi);
        iters += 1;
    }
    Ok(pi)
}

fn direct_stationary(kernel: &TransitionKernel) -> Option<Vec<f64>> {
    let n = kernel.len();
    // (P^T - I) pi = 0 with the last equation replaced by sum(pi) = 1
    let mut a = DMatrix::<f64>::zeros(n, n);
    for (k, row) in kernel.rows().iter().enumerate() {
        for &(t, p) in row {
            a[(t, k)] += p;
        }
        a[(k, k)] -= 1.0;
    }
    for c in 0..n {
        a[(n - 1, c)] = 1.0;
    }
    let mut b = DVector::<f64>::zeros(n);
    b[n - 1] = 1.0;
    let x = a.lu().solve(&b)?;
    let mut pi: Vec<f64> = x.iter().map(|v| v.max(0.0)).collect();
    let z: f64 = pi.iter().sum();
    if z.is_nan() || z <= 0.0 {
        return None;
    }
    pi.iter_mut().for_each(|v| *v /= z);
    Some(pi)
}

/// `|| pi P - pi ||_1`.
pub fn stationary_residual(kernel: &TransitionKernel, pi: &[f64]) -> f64 {
    kernel
        .left_mul(pi)
        .iter()
        .zip(pi)
        .map(|(a, b)| (a - b).abs())
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cycle(n: usize) -> TransitionKernel {
        TransitionKernel::from_index_rows((0..n).map(|k| vec![((k + 1) % n, 1.0)]).collect())
            .unwrap()
    }

    #[test]
    fn deterministic_two_cycle_is_valid() {
        let k = TransitionKernel::new_unchecked(
            vec!["0".into(), "1".into()],
            vec![vec![(1, 1.0)], vec![(0, 1.0)]],
        );
        let r = k.validate();
        assert!(r.is_valid() && r.is_irreducible());
    }

    #[test]
    fn row_sum_violation_is_reported() {
        let k = TransitionKernel::new_unchecked(
            vec!["0".into(), "1".into()],
            vec![vec![(1, 0.9)], vec![(0, 1.0)]],
        );
        let r = k.validate();
        let bad: Vec<_> = r.row_sum_violations().collect();
        assert_eq!(bad.len(), 1);
        assert!(matches!(bad[0], Violation::RowSum { state, .. } if state == "0"));
        assert!(r.is_irreducible());
    }

    #[test]
    fn disconnected_self_loops_are_reducible() {
        let k = TransitionKernel::new_unchecked(
            vec!["a".into(), "b".into()],
            vec![vec![(0, 1.0)], vec![(1, 1.0)]],
        );
        let r = k.validate();
        assert!(!r.is_irreducible());
        assert_eq!(r.violations.len(), 1);
        assert!(TransitionKernel::new(k.states().to_vec(), k.rows().to_vec()).is_err());
    }

    #[test]
    fn bad_targets_and_probabilities() {
        let k = TransitionKernel::new_unchecked(
            vec!["0".into()],
            vec![vec![(3, 0.5), (0, -0.5), (0, 1.0)]],
        );
        let r = k.validate();
        assert!(r
            .violations
            .iter()
            .any(|v| matches!(v, Violation::BadTarget { target: 3, .. })));
        assert!(r
            .violations
            .iter()
            .any(|v| matches!(v, Violation::BadProbability { .. })));
        assert!(r
            .violations
            .iter()
            .any(|v| matches!(v, Violation::DuplicateTarget { .. })));
    }

    #[test]
    fn stationary_small_chains() {
        let two = build_two_state(0.5).unwrap();
        let pi = stationary_distribution(&two, 1e-14).unwrap();
        assert!((pi[0] - 2.0 / 3.0).abs() < 1e-14 && (pi[1] - 1.0 / 3.0).abs() < 1e-14);
        let pi = stationary_distribution(&cycle(2), 1e-14).unwrap();
        assert!((pi[0] - 0.5).abs() < 1e-15);
        let pi = stationary_distribution(&cycle(3), 1e-14).unwrap();
        assert!(pi.iter().all(|p| (p - 1.0 / 3.0).abs() < 1e-15));
    }

    #[test]
    fn json_round_trip_and_revalidation() {
        let k = build_two_state(0.25).unwrap();
        let back = TransitionKernel::from_json_str(&k.to_json_string()).unwrap();
        assert_eq!(back.rows(), k.rows());
        let bad = r#"{"states": ["0","1"], "rows": [[["1", 0.5]], [["0", 1.0]]]}"#;
        assert!(matches!(
            TransitionKernel::from_json_str(bad),
            Err(Error::InvalidKernel(_))
        ));
        let unknown = r#"{"states": ["0"], "rows": [[["x", 1.0]]]}"#;
        assert!(matches!(
            TransitionKernel::from_json_str(unknown),
            Err(Error::InvalidState(_))
        ));
    }
}
