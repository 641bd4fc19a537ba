//! Exact passage laws by taboo propagation.
//!
//! `q_n(k) = P(X_n = k, no taboo state visited at times 1..=n | X_0 = start)`
//! is advanced by sparse vector-matrix products and the probability of
//! entering the target at step `n` is `sum_k q_{n-1}(k) p(k, target)`. The
//! vector is renormalized every step and its scale carried in log space, so
//! pmf values far below `f64::MIN_POSITIVE` are still resolved.
//!
//! For a conditioned law the survival `P(hit target after n)` is
//! `sum_k q_n(k) w(k)` with `w(k)` the probability, solved once, that `k`
//! is absorbed at the target rather than at another taboo state. No mass is
//! ever obtained as `1 - sum`.

use nalgebra::{DMatrix, DVector};

use super::{PassageLaw, TailCert};
use crate::chain::TransitionKernel;
use crate::error::{Error, Result};
use crate::logspace::{ln, NEG_INF};

/// Ratios must agree within this spread over the window to certify a tail.
const CERT_SPREAD: f64 = 1e-6;
const CERT_WINDOW: usize = 20;
const CERT_SLACK: f64 = 1e-6;
const CERT_MAX_PERIOD: usize = 8;

struct Propagation {
    log_pmf: Vec<f64>,
    /// `log_survival[n]`, `n = 0..=horizon`.
    log_survival: Vec<f64>,
}

fn check_pair(kernel: &TransitionKernel, i: usize, j: usize, horizon: usize) -> Result<()> {
    kernel.check_index(i)?;
    kernel.check_index(j)?;
    kernel.ensure_valid()?;
    if horizon < 1 {
        return Err(Error::HorizonTooSmall(horizon));
    }
    Ok(())
}

fn check_distinct(kernel: &TransitionKernel, i: usize, j: usize) -> Result<()> {
    if i == j {
        return Err(Error::InvalidParameter(format!(
            "states must differ (both `{}`)",
            kernel.state_name(i)
        )));
    }
    Ok(())
}

fn taboo_walk(
    kernel: &TransitionKernel,
    start: usize,
    taboo: &[bool],
    target: usize,
    weight: &[f64],
    log_z: f64,
    horizon: usize,
) -> Propagation {
    let n_states = kernel.len();
    let mut q = vec![0.0; n_states];
    q[start] = 1.0;
    let mut log_scale = 0.0;
    let mut log_pmf = vec![NEG_INF; horizon];
    let mut log_survival = vec![NEG_INF; horizon + 1];
    log_survival[0] = log_z;
    let mut next = vec![0.0; n_states];
    for n in 1..=horizon {
        next.iter_mut().for_each(|x| *x = 0.0);
        let mut hit = 0.0;
        for (k, &qk) in q.iter().enumerate() {
            if qk == 0.0 {
                continue;
            }
            for &(l, p) in kernel.row(k) {
                if l == target {
                    hit += qk * p;
                } else if !taboo[l] {
                    next[l] += qk * p;
                }
            }
        }
        log_pmf[n - 1] = log_scale + ln(hit);
        let mass: f64 = next.iter().sum();
        let surv: f64 = next.iter().zip(weight).map(|(a, w)| a * w).sum();
        log_survival[n] = log_scale + ln(surv);
        if mass == 0.0 || surv == 0.0 {
            break;
        }
        std::mem::swap(&mut q, &mut next);
        q.iter_mut().for_each(|x| *x /= mass);
        log_scale += mass.ln();
    }
    Propagation {
        log_pmf,
        log_survival,
    }
}

/// Empirical geometric-tail certificate from `log P(T > n)`, `n = 0..=H`.
///
/// Looks for 20 consecutive ratios `P(T > n+1)/P(T > n)` (n >= 1) that are
/// settled: their spread is below 1e-6 (period 1), or they repeat with some
/// period `d` up to 8 to within 1e-6 (periodic taboo chains, where single
/// ratios can equal 1). The `d`-step ratio `P(T > n+d)/P(T > n)` is then
/// bounded by its window max + 1e-6, accepted only if no later computed
/// `d`-step ratio exceeds it, and reported per step as its `d`-th root.
pub(crate) fn certify_tail(log_survival: &[f64]) -> Option<TailCert> {
    if log_survival.contains(&NEG_INF) || log_survival.len() < CERT_WINDOW + 2 {
        return None;
    }
    // ratios[m] is the ratio at n = m + 1
    let ratios: Vec<f64> = log_survival[1..]
        .windows(2)
        .map(|w| (w[1] - w[0]).exp())
        .collect();
    let settled = |a: usize, d: usize| {
        if d == 1 {
            let w = &ratios[a..a + CERT_WINDOW];
            let hi = w.iter().copied().fold(f64::MIN, f64::max);
            let lo = w.iter().copied().fold(f64::MAX, f64::min);
            hi - lo < CERT_SPREAD
        } else {
            a >= d && (a..a + CERT_WINDOW).all(|m| (ratios[m] - ratios[m - d]).abs() < CERT_SPREAD)
        }
    };
    for d in 1..=CERT_MAX_PERIOD {
        // step[m] is the d-step ratio from n = m + 1
        let step: Vec<f64> = log_survival[1..]
            .windows(d + 1)
            .map(|w| (w[d] - w[0]).exp())
            .collect();
        if step.len() < CERT_WINDOW {
            break;
        }
        let mut suffix_max = step.clone();
        for m in (0..step.len() - 1).rev() {
            suffix_max[m] = suffix_max[m].max(suffix_max[m + 1]);
        }
        for a in 0..=step.len() - CERT_WINDOW {
            if a + CERT_WINDOW > ratios.len() || !settled(a, d) {
                continue;
            }
            let rho_d = step[a..a + CERT_WINDOW]
                .iter()
                .copied()
                .fold(f64::MIN, f64::max)
                + CERT_SLACK;
            if rho_d < 1.0 && rho_d > 0.0 && suffix_max[a] <= rho_d {
                let rho = rho_d.powf(1.0 / d as f64);
                return Some(TailCert {
                    n0: a as u64 + 1,
                    rho,
                    period: d as u64,
                });
            }
        }
    }
    None
}

fn into_law(prop: Propagation, log_z: f64) -> PassageLaw {
    let Propagation {
        mut log_pmf,
        mut log_survival,
    } = prop;
    if log_z != 0.0 {
        log_pmf.iter_mut().for_each(|x| *x -= log_z);
        log_survival.iter_mut().for_each(|x| *x -= log_z);
    }
    let cert = certify_tail(&log_survival);
    let tail = *log_survival.last().expect("horizon >= 1");
    PassageLaw::dense_unchecked(log_pmf, tail, cert)
}

/// Law of `T_ij`, the first time the chain started at `i` visits `j`
/// (the first return time when `i == j`), on `n = 1..=horizon`.
pub fn first_passage_law(
    kernel: &TransitionKernel,
    i: usize,
    j: usize,
    horizon: usize,
) -> Result<PassageLaw> {
    check_pair(kernel, i, j, horizon)?;
    let mut taboo = vec![false; kernel.len()];
    taboo[j] = true;
    let weight = vec![1.0; kernel.len()];
    Ok(into_law(
        taboo_walk(kernel, i, &taboo, j, &weight, 0.0, horizon),
        0.0,
    ))
}

/// `P_k(reach target before any other absorbing state)` for every `k`.
fn absorption(kernel: &TransitionKernel, absorbing: &[usize], target: usize) -> Result<Vec<f64>> {
    let n = kernel.len();
    let mut slot = vec![usize::MAX; n];
    let transient: Vec<usize> = (0..n).filter(|k| !absorbing.contains(k)).collect();
    for (s, &k) in transient.iter().enumerate() {
        slot[k] = s;
    }
    let mut h = vec![0.0; n];
    h[target] = 1.0;
    if transient.is_empty() {
        return Ok(h);
    }
    let m = transient.len();
    let mut a = DMatrix::<f64>::identity(m, m);
    let mut b = DVector::<f64>::zeros(m);
    for (s, &k) in transient.iter().enumerate() {
        for &(l, p) in kernel.row(k) {
            if l == target {
                b[s] += p;
            } else if slot[l] != usize::MAX {
                a[(s, slot[l])] -= p;
            }
        }
    }
    let x = a
        .lu()
        .solve(&b)
        .ok_or_else(|| Error::InvalidKernel("absorption system is singular".into()))?;
    for (s, &k) in transient.iter().enumerate() {
        h[k] = x[s].clamp(0.0, 1.0);
    }
    Ok(h)
}

/// One step from `i`, then the absorption value.
fn first_step_value(kernel: &TransitionKernel, i: usize, h: &[f64]) -> f64 {
    kernel.row(i).iter().map(|&(l, p)| p * h[l]).sum()
}

/// Probability that the chain started at `i` reaches `j` before returning to `i`.
pub fn hit_before_return_prob(kernel: &TransitionKernel, i: usize, j: usize) -> Result<f64> {
    check_pair(kernel, i, j, 1)?;
    check_distinct(kernel, i, j)?;
    let h = absorption(kernel, &[i, j], j)?;
    Ok(first_step_value(kernel, i, &h))
}

/// Whether some path leaves `i` and comes back without touching `j`.
fn returns_avoiding(kernel: &TransitionKernel, i: usize, j: usize) -> bool {
    let mut seen = vec![false; kernel.len()];
    let mut stack = Vec::new();
    for &(l, p) in kernel.row(i) {
        if p > 0.0 && l != j && !std::mem::replace(&mut seen[l], true) {
            stack.push(l);
        }
    }
    while let Some(k) = stack.pop() {
        if k == i {
            return true;
        }
        for &(l, p) in kernel.row(k) {
            if p > 0.0 && l != j && !std::mem::replace(&mut seen[l], true) {
                stack.push(l);
            }
        }
    }
    seen[i]
}

/// Law of `U_ij`: the return time to `i` conditioned on not visiting `j`
/// before the return.
pub fn conditioned_return_law(
    kernel: &TransitionKernel,
    i: usize,
    j: usize,
    horizon: usize,
) -> Result<PassageLaw> {
    check_pair(kernel, i, j, horizon)?;
    check_distinct(kernel, i, j)?;
    if !returns_avoiding(kernel, i, j) {
        return Err(Error::NoSuchPath {
            from: kernel.state_name(i).to_string(),
            avoid: kernel.state_name(j).to_string(),
        });
    }
    let w = absorption(kernel, &[i, j], i)?;
    let log_z = first_step_value(kernel, i, &w).ln();
    let mut taboo = vec![false; kernel.len()];
    taboo[i] = true;
    taboo[j] = true;
    Ok(into_law(
        taboo_walk(kernel, i, &taboo, i, &w, log_z, horizon),
        log_z,
    ))
}

/// Law of `V_ij`: the hitting time of `j` from `i` conditioned on not
/// returning to `i` first.
pub fn conditioned_hit_law(
    kernel: &TransitionKernel,
    i: usize,
    j: usize,
    horizon: usize,
) -> Result<PassageLaw> {
    check_pair(kernel, i, j, horizon)?;
    check_distinct(kernel, i, j)?;
    let h = absorption(kernel, &[i, j], j)?;
    let log_z = first_step_value(kernel, i, &h).ln();
    let mut taboo = vec![false; kernel.len()];
    taboo[i] = true;
    taboo[j] = true;
    Ok(into_law(
        taboo_walk(kernel, i, &taboo, j, &h, log_z, horizon),
        log_z,
    ))
}

/// Law of `T_ii` conditioned on visiting `j` before the return, by path
/// filtering: mass is tracked separately for paths that have and have not
/// yet visited `j`.
pub fn crossing_return_law(
    kernel: &TransitionKernel,
    i: usize,
    j: usize,
    horizon: usize,
) -> Result<PassageLaw> {
    check_pair(kernel, i, j, horizon)?;
    check_distinct(kernel, i, j)?;
    let n_states = kernel.len();
    // eventual crossing probability for unflagged mass
    let h = absorption(kernel, &[i, j], j)?;
    let log_z = first_step_value(kernel, i, &h).ln();

    let mut fresh = vec![0.0; n_states];
    let mut crossed = vec![0.0; n_states];
    fresh[i] = 1.0;
    let mut log_scale = 0.0;
    let mut log_pmf = vec![NEG_INF; horizon];
    let mut log_survival = vec![NEG_INF; horizon + 1];
    log_survival[0] = log_z;
    let mut nf = vec![0.0; n_states];
    let mut nc = vec![0.0; n_states];
    for n in 1..=horizon {
        nf.iter_mut().for_each(|x| *x = 0.0);
        nc.iter_mut().for_each(|x| *x = 0.0);
        let mut hit = 0.0;
        for k in 0..n_states {
            let (f, c) = (fresh[k], crossed[k]);
            if f == 0.0 && c == 0.0 {
                continue;
            }
            for &(l, p) in kernel.row(k) {
                if l == i {
                    hit += c * p;
                } else if l == j {
                    nc[l] += (f + c) * p;
                } else {
                    nf[l] += f * p;
                    nc[l] += c * p;
                }
            }
        }
        log_pmf[n - 1] = log_scale + ln(hit);
        let mass: f64 = nf.iter().sum::<f64>() + nc.iter().sum::<f64>();
        let surv: f64 = nc.iter().sum::<f64>() + nf.iter().zip(&h).map(|(a, w)| a * w).sum::<f64>();
        log_survival[n] = log_scale + ln(surv);
        if mass == 0.0 || surv == 0.0 {
            break;
        }
        std::mem::swap(&mut fresh, &mut nf);
        std::mem::swap(&mut crossed, &mut nc);
        fresh
            .iter_mut()
            .chain(crossed.iter_mut())
            .for_each(|x| *x /= mass);
        log_scale += mass.ln();
    }
    Ok(into_law(
        Propagation {
            log_pmf,
            log_survival,
        },
        log_z,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chain::{build_petal_chain, build_two_state};
    use crate::passage::AtomicDist;

    fn cycle(n: usize) -> TransitionKernel {
        TransitionKernel::from_index_rows((0..n).map(|k| vec![((k + 1) % n, 1.0)]).collect())
            .unwrap()
    }

    #[test]
    fn two_state_return_to_zero() {
        let k = build_two_state(0.5).unwrap();
        let law = first_passage_law(&k, 0, 0, 10).unwrap();
        assert!((law.pmf(1) - 0.5).abs() < 1e-15);
        assert!((law.pmf(2) - 0.5).abs() < 1e-15);
        assert!(law.is_complete());
    }

    #[test]
    fn two_state_return_to_one_is_shifted_geometric() {
        let k = build_two_state(0.5).unwrap();
        let law = first_passage_law(&k, 1, 1, 60).unwrap();
        assert_eq!(law.pmf(1), 0.0);
        for n in 2..=60u64 {
            assert!((law.pmf(n) - 0.5f64.powi(n as i32 - 1)).abs() < 1e-16);
        }
        assert!((law.log_tail_mass() - 59.0 * 0.5f64.ln()).abs() < 1e-12);
        let cert = law.tail_cert().expect("geometric tail is certified");
        assert!((cert.rho - 0.5).abs() < 2e-6);
    }

    #[test]
    fn deep_tail_is_resolved_in_log_space() {
        let k = build_two_state(0.5).unwrap();
        let law = first_passage_law(&k, 1, 1, 3000).unwrap();
        let want = 2999.0 * 0.5f64.ln();
        assert!((law.log_pmf(3000).unwrap() - want).abs() < 1e-9 * want.abs());
    }

    #[test]
    fn cycle_passage_is_a_point_mass() {
        let law = first_passage_law(&cycle(3), 0, 2, 10).unwrap();
        assert_eq!(law.pmf(2), 1.0);
        assert!(law.is_complete());
    }

    #[test]
    fn hit_before_return_examples() {
        let two = build_two_state(0.3).unwrap();
        assert!((hit_before_return_prob(&two, 1, 0).unwrap() - 1.0).abs() < 1e-15);
        let two = build_two_state(0.5).unwrap();
        assert!((hit_before_return_prob(&two, 0, 1).unwrap() - 0.5).abs() < 1e-15);
        assert!((hit_before_return_prob(&cycle(3), 0, 1).unwrap() - 1.0).abs() < 1e-15);
        assert!(hit_before_return_prob(&cycle(3), 0, 0).is_err());
    }

    #[test]
    fn two_state_conditioned_laws() {
        let k = build_two_state(0.5).unwrap();
        let u01 = conditioned_return_law(&k, 0, 1, 10).unwrap();
        assert!((u01.pmf(1) - 1.0).abs() < 1e-15);
        assert!(matches!(
            conditioned_return_law(&k, 1, 0, 10),
            Err(Error::NoSuchPath { .. })
        ));
        let v10 = conditioned_hit_law(&k, 1, 0, 10).unwrap();
        assert!((v10.pmf(1) - 1.0).abs() < 1e-15);
        let v01 = conditioned_hit_law(&k, 0, 1, 10).unwrap();
        assert!((v01.pmf(1) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn petal_conditioned_hit_is_one_step() {
        let d3 = AtomicDist::point(3);
        let k = build_petal_chain(&d3, &d3, 0.5, 4).unwrap();
        let v = conditioned_hit_law(&k, 1, 0, 20).unwrap();
        assert!((v.pmf(1) - 1.0).abs() < 1e-15);
        let t11 = first_passage_law(&k, 1, 1, 20).unwrap();
        assert!((t11.pmf(2) - 0.5).abs() < 1e-15 && (t11.pmf(3) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn errors_for_bad_input() {
        let k = build_two_state(0.5).unwrap();
        assert!(matches!(
            first_passage_law(&k, 0, 5, 10),
            Err(Error::InvalidState(_))
        ));
        assert!(matches!(
            first_passage_law(&k, 0, 1, 0),
            Err(Error::HorizonTooSmall(0))
        ));
    }

    #[test]
    fn certificate_needs_a_stable_window() {
        let mut s = vec![0.0];
        for n in 1..30 {
            s.push(n as f64 * 0.5f64.ln());
        }
        assert!(certify_tail(&s).is_some());
        assert_eq!(certify_tail(&s).unwrap().period, 1);
        // a settled period-2 pattern certifies with the two-step rate, even
        // when one of the alternating ratios is exactly 1
        for (r0, r1) in [(0.2f64, 0.8f64), (1.0, 0.64)] {
            let mut s = vec![0.0];
            for n in 1..60 {
                let r = if n % 2 == 0 { r0 } else { r1 };
                s.push(s[n - 1] + r.ln());
            }
            let c = certify_tail(&s).unwrap();
            assert_eq!(c.period, 2);
            assert!((c.rho - (r0 * r1).sqrt()).abs() < 2e-6);
            // the envelope really bounds the survival function
            for j in 0..(s.len() as u64 - c.n0) {
                let env = s[c.n0 as usize] + c.log_prefactor() + j as f64 * c.rho.ln();
                assert!(s[(c.n0 + j) as usize] <= env + 1e-12);
            }
        }
        // ratios that keep drifting never certify
        let mut s = vec![0.0];
        for n in 1..60 {
            let r = 0.5 + 0.004 * n as f64;
            s.push(s[n - 1] + r.ln());
        }
        assert!(certify_tail(&s).is_none());
    }
}
