use rand::Rng;

use super::TransitionKernel;
use crate::error::{Error, Result};
use crate::passage::AtomicDist;

fn check_open_unit(p: f64) -> Result<()> {
    if p > 0.0 && p < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidProbability(p))
    }
}

/// States `0` and `1` with `p(0,1) = p`, `p(0,0) = 1 - p`, `p(1,0) = 1`.
pub fn build_two_state(p: f64) -> Result<TransitionKernel> {
    check_open_unit(p)?;
    TransitionKernel::new(
        vec!["0".into(), "1".into()],
        vec![vec![(0, 1.0 - p), (1, p)], vec![(0, 1.0)]],
    )
}

/// Hub-and-petal chain realizing prescribed return-length laws at state `1`.
///
/// From `1` the chain exits to `0` with probability `p`; otherwise it enters,
/// with probability `(1 - p)/2` each, a left petal of length `x` chosen from
/// `u1` or a right petal of length `y` chosen from `u2`. A petal of length
/// `x` is the deterministic path `(L,n,1) -> ... -> (L,n,x-1) -> 1`, so the
/// excursion takes exactly `x` steps; length-1 atoms become a self-loop at
/// `1`. State `0` always moves to `1`.
///
/// Each law keeps its `max_petals` heaviest atoms, renormalized.
pub fn build_petal_chain(
    u1: &AtomicDist,
    u2: &AtomicDist,
    p: f64,
    max_petals: usize,
) -> Result<TransitionKernel> {
    check_open_unit(p)?;
    let u1 = u1.truncate_renormalized(max_petals)?;
    let u2 = u2.truncate_renormalized(max_petals)?;
    let side = 0.5 * (1.0 - p);

    let mut states: Vec<String> = vec!["0".into(), "1".into()];
    let mut rows: Vec<Vec<(usize, f64)>> = vec![vec![(1, 1.0)], Vec::new()];
    let mut hub: Vec<(usize, f64)> = vec![(0, p)];
    let mut self_loop = 0.0;

    for (label, law) in [("L", &u1), ("R", &u2)] {
        for (n, (&len, w)) in law.atoms().iter().zip(law.normalized_weights()).enumerate() {
            let mass = side * w;
            if len == 1 {
                self_loop += mass;
                continue;
            }
            let first = states.len();
            for m in 1..len {
                states.push(format!("({label},{},{m})", n + 1));
                let next = if m + 1 == len { 1 } else { states.len() };
                rows.push(vec![(next, 1.0)]);
            }
            hub.push((first, mass));
        }
    }
    if self_loop > 0.0 {
        hub.insert(1, (1, self_loop));
    }
    rows[1] = hub;
    TransitionKernel::new(states, rows)
}

/// The two countable families used by the counterexamples, with sampling
/// that never expands petals into states.
#[derive(Debug, Clone)]
pub enum ParametricChain {
    TwoState {
        p: f64,
    },
    Petal {
        u1: AtomicDist,
        u2: AtomicDist,
        p: f64,
    },
}

impl ParametricChain {
    pub fn two_state(p: f64) -> Result<Self> {
        check_open_unit(p)?;
        Ok(Self::TwoState { p })
    }

    pub fn petal(u1: AtomicDist, u2: AtomicDist, p: f64) -> Result<Self> {
        check_open_unit(p)?;
        if u1.is_empty() || u2.is_empty() {
            return Err(Error::EmptySupport);
        }
        Ok(Self::Petal { u1, u2, p })
    }

    pub fn p(&self) -> f64 {
        match self {
            Self::TwoState { p } | Self::Petal { p, .. } => *p,
        }
    }

    /// Explicit kernel; petal chains keep every atom.
    pub fn to_kernel(&self) -> Result<TransitionKernel> {
        match self {
            Self::TwoState { p } => build_two_state(*p),
            Self::Petal { u1, u2, p } => build_petal_chain(u1, u2, *p, u1.len().max(u2.len())),
        }
    }
}

/// Random irreducible, aperiodic kernel on `n` states for property tests.
///
/// A random Hamiltonian cycle guarantees irreducibility; every other edge
/// (self-loops included) is present with probability `density`, and at
/// least one self-loop is forced. Weights are uniform on `[0.05, 1]` before
/// row normalization.
pub fn random_irreducible_kernel<R: Rng + ?Sized>(
    n: usize,
    density: f64,
    rng: &mut R,
) -> TransitionKernel {
    assert!(n >= 1);
    let mut perm: Vec<usize> = (0..n).collect();
    for k in (1..n).rev() {
        perm.swap(k, rng.gen_range(0..=k));
    }
    let mut adj = vec![vec![false; n]; n];
    for k in 0..n {
        adj[perm[k]][perm[(k + 1) % n]] = true;
    }
    for row in adj.iter_mut() {
        for e in row.iter_mut() {
            if rng.gen::<f64>() < density {
                *e = true;
            }
        }
    }
    if n > 1 && !(0..n).any(|k| adj[k][k]) {
        let k = rng.gen_range(0..n);
        adj[k][k] = true;
    }
    let rows = adj
        .iter()
        .map(|row| {
            let w: Vec<(usize, f64)> = row
                .iter()
                .enumerate()
                .filter(|(_, e)| **e)
                .map(|(t, _)| (t, rng.gen_range(0.05..=1.0)))
                .collect();
            let z: f64 = w.iter().map(|(_, x)| x).sum();
            let mut w: Vec<(usize, f64)> = w.into_iter().map(|(t, x)| (t, x / z)).collect();
            // absorb rounding into the largest entry so the row sums to 1 closely
            let s: f64 = w.iter().map(|(_, x)| x).sum();
            if let Some(m) = w.iter_mut().max_by(|a, b| a.1.total_cmp(&b.1)) {
                m.1 += 1.0 - s;
            }
            w
        })
        .collect();
    TransitionKernel::from_index_rows(rows).expect("random kernel is valid by construction")
}
