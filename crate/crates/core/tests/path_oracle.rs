//! Passage laws checked against explicit enumeration of every path of the
//! chain up to a fixed length, with normalizing constants from a separate
//! Gaussian-elimination solve.

#![allow(clippy::needless_range_loop)]

use recur_moments::chain::random_irreducible_kernel;
use recur_moments::passage::{
    conditioned_hit_law, conditioned_return_law, crossing_return_law, first_passage_law,
    hit_before_return_prob,
};
use recur_moments::{rng, Error, TransitionKernel};

const DEPTH: usize = 8;
const TOL: f64 = 1e-13;

/// Calls `visit(path, prob)` for every path `start = x_0, x_1, ..., x_n`
/// with `1 <= n <= DEPTH` and positive probability.
fn walk(
    k: &TransitionKernel,
    path: &mut Vec<usize>,
    prob: f64,
    visit: &mut impl FnMut(&[usize], f64),
) {
    if path.len() > DEPTH {
        return;
    }
    let cur = *path.last().unwrap();
    for &(next, p) in k.row(cur) {
        if p == 0.0 {
            continue;
        }
        path.push(next);
        visit(path, prob * p);
        walk(k, path, prob * p, visit);
        path.pop();
    }
}

/// Mass of paths from `start` whose first `n` steps satisfy `accept`, by `n`.
fn enumerate(k: &TransitionKernel, start: usize, accept: impl Fn(&[usize]) -> bool) -> Vec<f64> {
    let mut mass = vec![0.0; DEPTH + 1];
    let mut path = vec![start];
    walk(k, &mut path, 1.0, &mut |p, w| {
        if accept(p) {
            mass[p.len() - 1] += w;
        }
    });
    mass
}

/// First index `t >= 1` with `path[t] == s`.
fn first_visit(path: &[usize], s: usize) -> Option<usize> {
    path.iter().skip(1).position(|&x| x == s).map(|t| t + 1)
}

/// `P_i(reach j before returning to i)` by dense Gaussian elimination on
/// `h(x) = sum_y p(x,y) h(y)` with `h(j) = 1`, `h(i) = 0` after the first step.
fn hit_first_oracle(k: &TransitionKernel, i: usize, j: usize) -> f64 {
    let n = k.len();
    let mut a = vec![vec![0.0; n + 1]; n];
    for x in 0..n {
        a[x][x] = 1.0;
        if x == j {
            a[x][n] = 1.0;
        } else if x != i {
            for &(y, p) in k.row(x) {
                a[x][y] -= p;
            }
        }
    }
    for c in 0..n {
        let piv = (c..n)
            .max_by(|&r, &s| a[r][c].abs().total_cmp(&a[s][c].abs()))
            .unwrap();
        a.swap(c, piv);
        for r in 0..n {
            if r != c {
                let m = a[r][c] / a[c][c];
                for col in c..=n {
                    a[r][col] -= m * a[c][col];
                }
            }
        }
    }
    let h: Vec<f64> = (0..n).map(|x| a[x][n] / a[x][x]).collect();
    k.row(i).iter().map(|&(y, p)| p * h[y]).sum()
}

fn kernels() -> Vec<TransitionKernel> {
    (0..12u64)
        .map(|c| {
            let n = 3 + (c % 2) as usize;
            random_irreducible_kernel(n, 0.7, &mut rng::stream(0x0A7E, c))
        })
        .collect()
}

fn assert_pmf(name: &str, law: &recur_moments::PassageLaw, want: &[f64], scale: f64) {
    for n in 1..=DEPTH {
        let got = law.pmf(n as u64);
        assert!(
            (got - want[n] / scale).abs() < TOL,
            "{name}: n = {n}, got {got}, want {}",
            want[n] / scale
        );
    }
}

#[test]
fn first_passage_laws_match_path_enumeration() {
    for k in kernels() {
        for i in 0..k.len() {
            for j in 0..k.len() {
                let want = enumerate(&k, i, |p| first_visit(p, j) == Some(p.len() - 1));
                let law = first_passage_law(&k, i, j, 50).unwrap();
                assert_pmf("T", &law, &want, 1.0);
            }
        }
    }
}

#[test]
fn hit_before_return_matches_linear_solve() {
    for k in kernels() {
        for i in 0..k.len() {
            for j in (0..k.len()).filter(|&j| j != i) {
                let got = hit_before_return_prob(&k, i, j).unwrap();
                let want = hit_first_oracle(&k, i, j);
                assert!((got - want).abs() < 1e-12, "{got} vs {want}");
            }
        }
    }
}

#[test]
fn conditioned_and_crossing_laws_match_path_enumeration() {
    for k in kernels() {
        for i in 0..k.len() {
            for j in (0..k.len()).filter(|&j| j != i) {
                let h = hit_first_oracle(&k, i, j);
                let ends_at = |p: &[usize], s: usize| first_visit(p, s) == Some(p.len() - 1);
                // U: back at i first, j never seen
                let u = enumerate(&k, i, |p| ends_at(p, i) && first_visit(p, j).is_none());
                if u.iter().all(|&m| m == 0.0) && 1.0 - h < 1e-12 {
                    // every return passes through j, so U is undefined
                    assert!(matches!(
                        conditioned_return_law(&k, i, j, 50),
                        Err(Error::NoSuchPath { .. })
                    ));
                } else {
                    assert_pmf(
                        "U",
                        &conditioned_return_law(&k, i, j, 50).unwrap(),
                        &u,
                        1.0 - h,
                    );
                }
                // V: at j first, i not revisited
                let v = enumerate(&k, i, |p| ends_at(p, j) && first_visit(p, i).is_none());
                assert_pmf("V", &conditioned_hit_law(&k, i, j, 50).unwrap(), &v, h);
                // crossing: back at i first, j seen on the way
                let x = enumerate(&k, i, |p| ends_at(p, i) && first_visit(p, j).is_some());
                assert_pmf(
                    "crossing",
                    &crossing_return_law(&k, i, j, 50).unwrap(),
                    &x,
                    h,
                );
            }
        }
    }
}
