//! Natural-log probability arithmetic.

pub const NEG_INF: f64 = f64::NEG_INFINITY;

#[inline]
pub fn logaddexp(a: f64, b: f64) -> f64 {
    if a == NEG_INF {
        return b;
    }
    if b == NEG_INF {
        return a;
    }
    if a > b {
        a + (b - a).exp().ln_1p()
    } else {
        b + (a - b).exp().ln_1p()
    }
}

/// Max-shifted log-sum-exp over a slice. Empty input gives `-inf`.
pub fn logsumexp(xs: &[f64]) -> f64 {
    logsumexp_iter(xs.iter().copied())
}

pub fn logsumexp_iter<I>(xs: I) -> f64
where
    I: IntoIterator<Item = f64>,
    I::IntoIter: Clone,
{
    let it = xs.into_iter();
    let max = it.clone().fold(NEG_INF, f64::max);
    if max == NEG_INF {
        return NEG_INF;
    }
    if max == f64::INFINITY {
        return f64::INFINITY;
    }
    let s: f64 = it.map(|x| (x - max).exp()).sum();
    max + s.ln()
}

/// `ln(1 - e^x)` for `x <= 0`, accurate near both ends.
#[inline]
pub fn log1mexp(x: f64) -> f64 {
    if x > -std::f64::consts::LN_2 {
        (-x.exp_m1()).ln()
    } else {
        (-x.exp()).ln_1p()
    }
}

/// Safe log of a linear-space probability (`0 -> -inf`).
#[inline]
pub fn ln(p: f64) -> f64 {
    if p <= 0.0 {
        NEG_INF
    } else {
        p.ln()
    }
}

/// Formats with 17 significant digits.
pub fn fmt17(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else if x.is_nan() {
        "nan".to_string()
    } else if x > 0.0 {
        "inf".to_string()
    } else {
        "-inf".to_string()
    }
}

/// Inverse of [`fmt17`], also accepting plain decimal notation.
pub fn parse_f64(s: &str) -> Option<f64> {
    match s.trim() {
        "inf" | "+inf" | "Infinity" => Some(f64::INFINITY),
        "-inf" | "-Infinity" => Some(NEG_INF),
        "nan" | "NaN" => Some(f64::NAN),
        t => t.parse().ok(),
    }
}
