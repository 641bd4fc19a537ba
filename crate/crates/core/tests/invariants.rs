//! Property tests for the algebra of passage laws, moment functions and
//! moment estimates.

use proptest::prelude::*;

use recur_moments::chain::{random_irreducible_kernel, KernelSampler};
use recur_moments::logspace::logsumexp;
use recur_moments::momentfn::{
    burst_fn, default_burst_schedule, growth_profile, log_power_fn, power_fn,
};
use recur_moments::moments::{
    f_moment, lower_bound_series, mc_f_moment, MomentPolicy, MomentVerdict,
};
use recur_moments::passage::{
    conditioned_hit_law, conditioned_return_law, convolve, crossing_return_law, first_passage_law,
    geometric_compound, hit_before_return_prob, mixture, stochastic_dominates,
};
use recur_moments::{rng, AtomicDist, PassageLaw, TransitionKernel};

fn kernel(seed: u64, n: usize) -> TransitionKernel {
    random_irreducible_kernel(n, 0.6, &mut rng::stream(seed, n as u64))
}

/// Small sparse law with atoms in `1..=30`.
fn atomic() -> impl Strategy<Value = PassageLaw> {
    prop::collection::btree_map(1u64..=30, 0.05f64..1.0, 1..6).prop_map(|m| {
        let z: f64 = m.values().sum();
        let pairs: Vec<(u64, f64)> = m.into_iter().map(|(x, w)| (x, w / z)).collect();
        AtomicDist::from_probs(&pairs).unwrap().into()
    })
}

/// Plain-array pmf over `0..=len`, index = time.
fn dense_pmf(law: &PassageLaw, len: usize) -> Vec<f64> {
    (0..=len)
        .map(|n| if n == 0 { 0.0 } else { law.pmf(n as u64) })
        .collect()
}

fn conv(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut c = vec![0.0; a.len()];
    for (i, x) in a.iter().enumerate() {
        for (j, y) in b.iter().enumerate().take(a.len() - i) {
            c[i + j] += x * y;
        }
    }
    c
}

fn max_gap(a: &PassageLaw, b: &PassageLaw, upto: u64) -> f64 {
    (1..=upto)
        .map(|n| (a.pmf(n) - b.pmf(n)).abs())
        .fold(0.0, f64::max)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn convolution_commutes_and_associates(a in atomic(), b in atomic(), c in atomic()) {
        let ab = convolve(&a, &b).unwrap();
        prop_assert!(max_gap(&ab, &convolve(&b, &a).unwrap(), 90) < 1e-15);
        let left = convolve(&ab, &c).unwrap();
        let right = convolve(&a, &convolve(&b, &c).unwrap()).unwrap();
        prop_assert!(max_gap(&left, &right, 90) < 1e-15);
        prop_assert!(left.mass_deviation() < 1e-12);
        // against a plain array convolution
        let want = conv(&dense_pmf(&a, 60), &dense_pmf(&b, 60));
        for n in 1..=60u64 {
            prop_assert!((ab.pmf(n) - want[n as usize]).abs() < 1e-15);
        }
    }

    #[test]
    fn dense_convolution_keeps_mass(seed in any::<u64>(), n in 2usize..5, h in 20usize..80) {
        let k = kernel(seed, n);
        let a = first_passage_law(&k, 0, n - 1, h).unwrap();
        let b = first_passage_law(&k, n - 1, 0, h).unwrap();
        let ab = convolve(&a, &b).unwrap();
        prop_assert!(ab.mass_deviation() < 1e-10);
        let want = conv(&dense_pmf(&a, h), &dense_pmf(&b, h));
        for m in 1..=h as u64 {
            prop_assert!((ab.pmf(m) - want[m as usize]).abs() < 1e-14);
        }
    }

    #[test]
    fn geometric_compound_matches_explicit_sum(u in atomic(), v in atomic(), pi in 0.05f64..0.95) {
        let law = geometric_compound(&u, &v, pi, 200).unwrap();
        prop_assert!(law.mass_deviation() < 1e-10);
        // sum_m pi (1 - pi)^m (u^{*m} * v), every term lands beyond 60 once m > 60
        let (uu, vv) = (dense_pmf(&u, 60), dense_pmf(&v, 60));
        let mut power = vec![0.0; 61];
        power[0] = 1.0;
        let mut want = vec![0.0; 61];
        for m in 0..=60 {
            let term = conv(&power, &vv);
            let w = pi * (1.0 - pi).powi(m);
            for (x, t) in want.iter_mut().zip(&term) {
                *x += w * t;
            }
            power = conv(&power, &uu);
        }
        for n in 1..=60u64 {
            prop_assert!((law.pmf(n) - want[n as usize]).abs() < 1e-14, "n = {}", n);
        }
    }

    #[test]
    fn return_time_decomposes_into_compound(seed in any::<u64>(), n in 2usize..5) {
        // T_ii = G(U_ij, T_ij, h) + T_ji  with h = P_i(hit j before i)
        let k = kernel(seed, n);
        let (i, j) = (0, n - 1);
        let h = hit_before_return_prob(&k, i, j).unwrap();
        let tii = first_passage_law(&k, i, i, 60).unwrap();
        let tij = first_passage_law(&k, i, j, 60).unwrap();
        let tji = first_passage_law(&k, j, i, 60).unwrap();
        // T_ij itself is the compound of U_ij and V_ij
        if h < 1.0 - 1e-12 {
            let u = conditioned_return_law(&k, i, j, 60).unwrap();
            let v = conditioned_hit_law(&k, i, j, 60).unwrap();
            prop_assert!(max_gap(&geometric_compound(&u, &v, h, 60).unwrap(), &tij, 60) < 1e-12);
        }
        // T_ii mixes the returns avoiding j with the crossing returns
        let x = crossing_return_law(&k, i, j, 60).unwrap();
        let mix = if h < 1.0 - 1e-12 {
            mixture(&[conditioned_return_law(&k, i, j, 60).unwrap(), x], &[1.0 - h, h]).unwrap()
        } else {
            x
        };
        prop_assert!(max_gap(&mix, &tii, 60) < 1e-12);
        // and T_ij + T_ji dominates T_ii
        let cycle = convolve(&tij, &tji).unwrap();
        let report = stochastic_dominates(&cycle.to_dense(60).unwrap(), &tii, 1e-12).unwrap();
        prop_assert!(report.dominates, "violation {}", report.max_cdf_violation);
    }

    #[test]
    fn mixture_is_linear(a in atomic(), b in atomic(), w in 0.0f64..=1.0) {
        let m = mixture(&[a.clone(), b.clone()], &[w, 1.0 - w]).unwrap();
        prop_assert!(m.mass_deviation() < 1e-12);
        for n in 1..=30u64 {
            prop_assert!((m.pmf(n) - (w * a.pmf(n) + (1.0 - w) * b.pmf(n))).abs() < 1e-15);
        }
        prop_assert!(mixture(&[a.clone(), b], &[w, 0.5 - w]).is_err());
    }

    #[test]
    fn shifting_a_law_dominates_it(a in atomic(), s in 1u64..5) {
        let shifted = convolve(&a, &PassageLaw::point(s)).unwrap();
        prop_assert!(stochastic_dominates(&shifted, &a, 0.0).unwrap().dominates);
        let back = stochastic_dominates(&a, &shifted, 0.0).unwrap();
        prop_assert!(!back.dominates && back.max_cdf_violation > 0.0);
    }

    #[test]
    fn law_csv_round_trips(seed in any::<u64>(), n in 2usize..5, h in 5usize..60) {
        let law = first_passage_law(&kernel(seed, n), 0, 0, h).unwrap();
        prop_assert_eq!(PassageLaw::from_csv(&law.to_csv()).unwrap(), law);
    }

    #[test]
    fn log_ratio_is_symmetric(x in 1u64..1_000_000, y in 1u64..1_000_000, p in 0.1f64..4.0) {
        for f in [power_fn(p).unwrap(), log_power_fn(p).unwrap(), burst_fn(default_burst_schedule()).unwrap()] {
            prop_assert_eq!(f.log_ratio(x, y), f.log_ratio(y, x));
        }
    }

    #[test]
    fn partial_sums_grow_with_the_horizon(seed in any::<u64>(), n in 2usize..6, h in 5usize..200, p in 0.5f64..3.0) {
        let k = kernel(seed, n);
        let f = power_fn(p).unwrap();
        let policy = MomentPolicy::default();
        let short = f_moment(&first_passage_law(&k, 0, 0, h).unwrap(), &f, &policy);
        let long = f_moment(&first_passage_law(&k, 0, 0, 2 * h).unwrap(), &f, &policy);
        prop_assert!(long.log_partial_sum >= short.log_partial_sum - 1e-12);
        // certified intervals at both horizons overlap
        if let (MomentVerdict::Converged { lo: a, hi: b }, MomentVerdict::Converged { lo: c, hi: d }) =
            (short.verdict, long.verdict)
        {
            prop_assert!(a <= d + 1e-12 && c <= b + 1e-12);
        }
    }

    #[test]
    fn divergence_is_monotone_in_threshold(t in 1.0f64..30.0, dt in 0.0f64..10.0, slope in 0.01f64..0.5) {
        // terms of a series with growing partial sums
        let terms: Vec<f64> = (1..=400).map(|k| slope * k as f64 - 3.0).collect();
        let high = lower_bound_series(terms.clone(), t);
        let low = lower_bound_series(terms, t - dt);
        if let Some(kh) = high.crossed_at {
            let kl = low.crossed_at.expect("lower threshold also crossed");
            prop_assert!(kl <= kh);
            let diverged = matches!(low.verdict(), MomentVerdict::Diverged { .. });
            prop_assert!(diverged);
        }
    }
}

#[test]
fn burst_witness_ratio_is_exact() {
    let f = burst_fn(default_burst_schedule()).unwrap();
    for i in 1..=20u32 {
        let x = (1u64 << (i - 1)) * i as u64 * (i as u64 + 1);
        assert_eq!(
            f.exact_burst_ratio(x, x),
            Some((1i128 << (i + 1)) - 2),
            "i = {i}"
        );
        assert_eq!(f.log_ratio(x, x), ((1u64 << (i + 1)) - 2) as f64);
    }
}

#[test]
fn running_sup_tail_never_increases() {
    let cps: Vec<u64> = (4..=40).step_by(3).map(|e| 1u64 << e).collect();
    for f in [
        power_fn(2.0).unwrap(),
        log_power_fn(1.0).unwrap(),
        burst_fn(default_burst_schedule()).unwrap(),
    ] {
        let prof = growth_profile(&f, 1 << 40, &cps).unwrap();
        for w in prof.running_sup_tail.windows(2) {
            assert!(w[1].1 <= w[0].1, "{}: {:?}", f.name(), w);
        }
    }
}

#[test]
fn monte_carlo_lands_inside_certified_intervals() {
    let f = power_fn(1.0).unwrap();
    for c in 0..3u64 {
        let k = kernel(0x5A4D + c, 3 + c as usize);
        let law = first_passage_law(&k, 0, 0, 2000).unwrap();
        let MomentVerdict::Converged { lo, hi } =
            f_moment(&law, &f, &MomentPolicy::default()).verdict
        else {
            panic!("chain {c} uncertified");
        };
        let sampler = KernelSampler::new(&k, 0, 0).unwrap();
        let mc = mc_f_moment(&sampler, &f, 1_000_000, 100_000, 7 + c).unwrap();
        assert_eq!(mc.censored_fraction, 0.0);
        let (m, s) = (mc.mean(), mc.std_err_linear());
        assert!(
            lo.exp() - 4.0 * s <= m && m <= hi.exp() + 4.0 * s,
            "chain {c}: {m} +- {s} vs [{}, {}]",
            lo.exp(),
            hi.exp()
        );
    }
}

#[test]
fn logsumexp_of_law_is_total_mass() {
    let law = first_passage_law(&kernel(3, 4), 1, 2, 300).unwrap();
    let lps: Vec<f64> = law.support().map(|(_, lp)| lp).collect();
    let total = logsumexp(&[logsumexp(&lps), law.log_tail_mass()]);
    assert!(total.abs() < 1e-12);
}
