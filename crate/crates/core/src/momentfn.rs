//! Candidate moment functions `f` and the two checks that decide whether
//! moment finiteness transfers between states: submultiplicativity
//! `f(x + y) <= K f(x) f(y)` and subexponential growth
//! `limsup (1/n) log f(n) = 0`.
//!
//! Functions are evaluated on `n >= 1` in log space. Burst functions
//! `f = e^g` carry an exact integer `g`.

use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::sync::{Arc, RwLock};

use rayon::prelude::*;

use crate::error::{Error, Result};

/// Largest burst index of the default schedule representable in `u64`;
/// `s_53` exceeds `u64::MAX`, so `g` is flat beyond this burst on all of `u64`.
const DEFAULT_BURSTS: usize = 52;

/// Witnesses kept in a [`SubmultReport`].
pub const WITNESS_KEEP: usize = 64;

#[derive(Debug, Default)]
struct Prefix {
    s: Vec<u64>,
    u: Vec<u64>,
    /// `cum[i] = u_1 + ... + u_{i+1}`.
    cum: Vec<u64>,
}

impl Prefix {
    fn push(&mut self, s: u64, u: u64) {
        let c = self.cum.last().copied().unwrap_or(0) + u;
        self.s.push(s);
        self.u.push(u);
        self.cum.push(c);
    }
}

#[derive(Debug)]
enum Source {
    Default,
    Explicit,
}

#[derive(Debug)]
struct ScheduleInner {
    source: Source,
    memo: RwLock<Prefix>,
}

/// Burst starts `s_i` and lengths `u_i`, `i >= 1`, with `s` strictly
/// increasing and `u_i <= s_{i+1} - s_i`.
///
/// The default schedule `s_i = i^2 2^i`, `u_i = i 2^i` is generated lazily;
/// explicit schedules are fixed lists and `g` stays flat after the last burst.
#[derive(Debug, Clone)]
pub struct BurstSchedule {
    inner: Arc<ScheduleInner>,
}

impl PartialEq for BurstSchedule {
    fn eq(&self, other: &Self) -> bool {
        if Arc::ptr_eq(&self.inner, &other.inner) {
            return true;
        }
        match (&self.inner.source, &other.inner.source) {
            (Source::Default, Source::Default) => true,
            (Source::Explicit, Source::Explicit) => {
                let (a, b) = (
                    self.inner.memo.read().unwrap(),
                    other.inner.memo.read().unwrap(),
                );
                a.s == b.s && a.u == b.u
            }
            _ => false,
        }
    }
}

fn default_s(i: usize) -> u64 {
    (i as u64 * i as u64) << i
}

fn default_u(i: usize) -> u64 {
    (i as u64) << i
}

/// `s_i = i^2 2^i`, `u_i = i 2^i`.
pub fn default_burst_schedule() -> BurstSchedule {
    BurstSchedule {
        inner: Arc::new(ScheduleInner {
            source: Source::Default,
            memo: RwLock::new(Prefix::default()),
        }),
    }
}

impl BurstSchedule {
    /// Explicit `(s_i, u_i)` pairs for `i = 1, 2, ...`.
    pub fn from_pairs(pairs: &[(u64, u64)]) -> Result<Self> {
        if pairs.len() < 2 {
            return Err(Error::InvalidParameter(
                "a burst schedule needs at least two bursts".into(),
            ));
        }
        let mut prefix = Prefix::default();
        for (k, &(s, u)) in pairs.iter().enumerate() {
            let i = k + 1;
            if u == 0 {
                return Err(Error::InvalidParameter(format!(
                    "burst {i} has zero length"
                )));
            }
            if let Some(&(s_next, u_next)) = pairs.get(k + 1) {
                if s_next <= s {
                    return Err(Error::InvalidParameter(format!(
                        "burst starts not increasing at i={i}"
                    )));
                }
                if u > s_next - s {
                    return Err(Error::InvalidParameter(format!(
                        "u_{i} = {u} exceeds s_{} - s_{i} = {}",
                        i + 1,
                        s_next - s
                    )));
                }
                if k + 2 == pairs.len() && u_next <= u {
                    return Err(Error::InvalidParameter(
                        "burst lengths must increase at the end of the schedule".into(),
                    ));
                }
            } else if s.checked_add(u).is_none() {
                return Err(Error::InvalidParameter(format!("burst {i} overflows")));
            }
            prefix.push(s, u);
        }
        if prefix.cum.last().copied().unwrap_or(0) > u64::MAX / 4 {
            return Err(Error::InvalidParameter("burst lengths too large".into()));
        }
        Ok(Self {
            inner: Arc::new(ScheduleInner {
                source: Source::Explicit,
                memo: RwLock::new(prefix),
            }),
        })
    }

    /// CSV rows `i,s_i,u_i` with `i = 1, 2, ...` in order; a header row is allowed.
    pub fn from_csv_str(text: &str) -> Result<Self> {
        let mut pairs = Vec::new();
        for (line_no, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let cols: Vec<&str> = line.split(',').map(str::trim).collect();
            if line_no == 0 && cols.first().is_some_and(|c| c.parse::<u64>().is_err()) {
                continue;
            }
            let parsed: Option<Vec<u64>> = if cols.len() == 3 {
                cols.iter().map(|c| c.parse().ok()).collect()
            } else {
                None
            };
            let Some(v) = parsed else {
                return Err(Error::Parse(format!(
                    "line {}: expected `i,s_i,u_i`",
                    line_no + 1
                )));
            };
            if v[0] != pairs.len() as u64 + 1 {
                return Err(Error::Parse(format!(
                    "line {}: burst index {} out of sequence",
                    line_no + 1,
                    v[0]
                )));
            }
            pairs.push((v[1], v[2]));
        }
        Self::from_pairs(&pairs)
    }

    pub fn from_csv_file(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_csv_str(&std::fs::read_to_string(path)?)
    }

    pub fn is_default(&self) -> bool {
        matches!(self.inner.source, Source::Default)
    }

    fn read<R>(&self, need: impl Fn(&Prefix) -> bool, f: impl FnOnce(&Prefix) -> R) -> R {
        {
            let p = self.inner.memo.read().unwrap();
            if matches!(self.inner.source, Source::Explicit)
                || need(&p)
                || p.s.len() >= DEFAULT_BURSTS
            {
                return f(&p);
            }
        }
        let mut p = self.inner.memo.write().unwrap();
        while !need(&p) && p.s.len() < DEFAULT_BURSTS {
            let i = p.s.len() + 1;
            p.push(default_s(i), default_u(i));
        }
        f(&p)
    }

    /// Number of bursts known; the default schedule is materialized in full.
    pub fn len(&self) -> usize {
        self.read(|p| p.s.len() >= DEFAULT_BURSTS, |p| p.s.len())
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// `(s_i, u_i)` for `i >= 1`.
    pub fn burst(&self, i: usize) -> Option<(u64, u64)> {
        if i == 0 {
            return None;
        }
        self.read(
            |p| p.s.len() >= i,
            |p| p.s.get(i - 1).map(|&s| (s, p.u[i - 1])),
        )
    }

    /// `sum_{k <= i} u_k`.
    pub fn cumulative(&self, i: usize) -> u64 {
        if i == 0 {
            return 0;
        }
        self.read(
            |p| p.s.len() >= i,
            |p| p.cum.get(i - 1).or(p.cum.last()).copied().unwrap_or(0),
        )
    }

    /// `g(n) = sum_k clamp(n - s_k, 0, u_k)`.
    pub fn g(&self, n: u64) -> u64 {
        self.read(
            |p| p.s.last().is_some_and(|&s| s >= n),
            |p| {
                // bursts with s_k < n
                let j = p.s.partition_point(|&s| s < n);
                if j == 0 {
                    return 0;
                }
                let before = if j >= 2 { p.cum[j - 2] } else { 0 };
                before + (n - p.s[j - 1]).min(p.u[j - 1])
            },
        )
    }

    /// `(s_i + u_i) / 2` when it is an integer in the flat region before `s_i`.
    pub fn midpoint(&self, i: usize) -> Option<u64> {
        let (s, u) = self.burst(i)?;
        let total = s.checked_add(u)?;
        if total % 2 != 0 {
            return None;
        }
        let x = total / 2;
        let prev_end = if i > 1 {
            self.burst(i - 1).map_or(0, |(s, u)| s + u)
        } else {
            0
        };
        (x >= prev_end && x <= s).then_some(x)
    }

    /// `u_i - sum_{k<i} u_k`, the log-ratio at `x = y = (s_i + u_i) / 2`.
    pub fn margin(&self, i: usize) -> Option<i128> {
        let (_, u) = self.burst(i)?;
        Some(u as i128 - self.cumulative(i - 1) as i128)
    }

    /// Burst midpoints and ends up to `limit`.
    pub fn structural_points(&self, limit: u64) -> Vec<u64> {
        let mut out = Vec::new();
        for i in 1.. {
            let Some((s, u)) = self.burst(i) else { break };
            if s > limit {
                if let Some(x) = self.midpoint(i).filter(|x| *x <= limit) {
                    out.push(x);
                }
                break;
            }
            if let Some(x) = self.midpoint(i) {
                out.push(x);
            }
            if s + u <= limit {
                out.push(s + u);
            }
        }
        out
    }

    /// Checks the schedule constraints on the materialized prefix; for the
    /// default schedule also that midpoints are flat-region integers, margins
    /// grow and burst-end peaks of `g(n)/n` decrease.
    pub fn verify(&self) -> Result<()> {
        let n = self.len();
        for i in 1..n {
            let ((s, u), (s2, _)) = (self.burst(i).unwrap(), self.burst(i + 1).unwrap());
            if s2 <= s || u > s2 - s {
                return Err(Error::InvalidParameter(format!(
                    "schedule constraint fails at i={i}"
                )));
            }
        }
        if self.is_default() {
            let mut last_margin = 0i128;
            let mut last_peak = f64::INFINITY;
            for i in 1..=n {
                let (s, u) = self.burst(i).unwrap();
                let m = self.margin(i).unwrap();
                let peak = self.cumulative(i) as f64 / (s + u) as f64;
                if self.midpoint(i).is_none() || m <= last_margin || peak >= last_peak {
                    return Err(Error::InvalidParameter(format!(
                        "default schedule check fails at i={i}"
                    )));
                }
                last_margin = m;
                last_peak = peak;
            }
        }
        Ok(())
    }
}

/// Family a [`MomentFunction`] belongs to.
#[derive(Debug, Clone, PartialEq)]
pub enum FnKind {
    Power(f64),
    LogPower(f64),
    Exponential(f64),
    Burst(BurstSchedule),
    Custom,
}

type CustomFn = Arc<dyn Fn(u64) -> f64 + Send + Sync>;

/// Non-decreasing unbounded `f` on `n >= 1`, evaluated as `log f(n)`.
#[derive(Clone)]
pub struct MomentFunction {
    name: String,
    kind: FnKind,
    custom: Option<CustomFn>,
}

impl fmt::Debug for MomentFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("MomentFunction")
            .field("name", &self.name)
            .field("kind", &self.kind)
            .finish()
    }
}

fn positive(what: &str, x: f64) -> Result<()> {
    if x > 0.0 && x.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!(
            "{what} must be positive, got {x}"
        )))
    }
}

/// `f(n) = n^p`.
pub fn power_fn(p: f64) -> Result<MomentFunction> {
    positive("power exponent", p)?;
    Ok(MomentFunction {
        name: format!("power:{p}"),
        kind: FnKind::Power(p),
        custom: None,
    })
}

/// `f(n) = (ln(n + 2))^q`.
pub fn log_power_fn(q: f64) -> Result<MomentFunction> {
    positive("log-power exponent", q)?;
    Ok(MomentFunction {
        name: format!("logpow:{q}"),
        kind: FnKind::LogPower(q),
        custom: None,
    })
}

/// `f(n) = e^{delta n}`.
pub fn exp_fn(delta: f64) -> Result<MomentFunction> {
    positive("exponential rate", delta)?;
    Ok(MomentFunction {
        name: format!("exp:{delta}"),
        kind: FnKind::Exponential(delta),
        custom: None,
    })
}

/// `f = e^g` with `g` rising with slope 1 on each burst and flat elsewhere.
pub fn burst_fn(schedule: BurstSchedule) -> Result<MomentFunction> {
    schedule.verify()?;
    let name = if schedule.is_default() {
        "burst:default".to_string()
    } else {
        "burst:custom".to_string()
    };
    Ok(MomentFunction {
        name,
        kind: FnKind::Burst(schedule),
        custom: None,
    })
}

impl MomentFunction {
    /// User function given by `log f`; it must be non-decreasing.
    pub fn custom(
        name: impl Into<String>,
        log_f: impl Fn(u64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Self {
            name: name.into(),
            kind: FnKind::Custom,
            custom: Some(Arc::new(log_f)),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn kind(&self) -> &FnKind {
        &self.kind
    }

    /// `log f(n)` for `n >= 1`.
    pub fn log_eval(&self, n: u64) -> f64 {
        debug_assert!(n >= 1, "moment functions are defined on n >= 1");
        let x = n as f64;
        match &self.kind {
            FnKind::Power(p) => p * x.ln(),
            FnKind::LogPower(q) => q * (x + 2.0).ln().ln(),
            FnKind::Exponential(d) => d * x,
            FnKind::Burst(s) => s.g(n) as f64,
            FnKind::Custom => (self.custom.as_ref().expect("custom function"))(n),
        }
    }

    /// Exact `g(n)` for burst functions.
    pub fn burst_g(&self, n: u64) -> Option<u64> {
        match &self.kind {
            FnKind::Burst(s) => Some(s.g(n)),
            _ => None,
        }
    }

    /// Exact `log f(x + y) - log f(x) - log f(y)` for burst functions.
    pub fn exact_burst_ratio(&self, x: u64, y: u64) -> Option<i128> {
        let FnKind::Burst(s) = &self.kind else {
            return None;
        };
        Some(s.g(x + y) as i128 - s.g(x) as i128 - s.g(y) as i128)
    }

    /// `log f(x + y) - (log f(x) + log f(y))`, symmetric in `x`, `y`.
    pub fn log_ratio(&self, x: u64, y: u64) -> f64 {
        if let Some(r) = self.exact_burst_ratio(x, y) {
            return r as f64;
        }
        self.log_eval(x + y) - (self.log_eval(x) + self.log_eval(y))
    }

    /// `ln K` for a proven submultiplicativity constant on `n >= 1`:
    /// `2^p` for powers, `2^q` for log-powers.
    pub fn analytic_log_k(&self) -> Option<f64> {
        match self.kind {
            FnKind::Power(p) => Some(p * std::f64::consts::LN_2),
            FnKind::LogPower(q) => Some(q * std::f64::consts::LN_2),
            FnKind::Exponential(_) => Some(0.0),
            _ => None,
        }
    }

    /// `log f(0) = -ln K`, the convention that keeps the submultiplicative
    /// inequality valid when one argument is zero.
    pub fn log_f_zero(log_k: f64) -> f64 {
        -log_k
    }

    /// `ln sup_{n >= from} f(n + 1) / f(n)` when known in closed form.
    pub fn log_growth_bound(&self, from: u64) -> Option<f64> {
        let n = from.max(1) as f64;
        match self.kind {
            FnKind::Power(p) => Some(p * (1.0 / n).ln_1p()),
            FnKind::LogPower(q) => Some(q * ((n + 3.0).ln().ln() - (n + 2.0).ln().ln())),
            FnKind::Exponential(d) => Some(d),
            FnKind::Burst(_) => Some(1.0),
            FnKind::Custom => None,
        }
    }

    /// Whether `log f` is non-decreasing along the sorted points.
    pub fn is_monotone_on(&self, points: &[u64]) -> bool {
        points
            .windows(2)
            .all(|w| self.log_eval(w[1]) >= self.log_eval(w[0]))
    }
}

impl FromStr for MomentFunction {
    type Err = Error;

    /// `power:<p>`, `logpow:<q>`, `exp:<delta>`, `burst:default`, `burst:file=<path>`.
    fn from_str(spec: &str) -> Result<Self> {
        let (head, arg) = spec
            .split_once(':')
            .ok_or_else(|| Error::Parse(format!("function spec `{spec}` has no `:`")))?;
        let num = || {
            arg.trim()
                .parse::<f64>()
                .map_err(|_| Error::Parse(format!("bad number in `{spec}`")))
        };
        match head.trim() {
            "power" => power_fn(num()?),
            "logpow" => log_power_fn(num()?),
            "exp" => exp_fn(num()?),
            "burst" => match arg.trim() {
                "default" => burst_fn(default_burst_schedule()),
                a => match a.strip_prefix("file=") {
                    Some(path) => burst_fn(BurstSchedule::from_csv_file(path)?),
                    None => Err(Error::Parse(format!("unknown burst schedule `{a}`"))),
                },
            },
            other => Err(Error::Parse(format!("unknown function kind `{other}`"))),
        }
    }
}

/// One scanned pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Witness {
    pub x: u64,
    pub y: u64,
    pub log_ratio: f64,
}

/// Result of a submultiplicativity scan.
#[derive(Debug, Clone, PartialEq)]
pub struct SubmultReport {
    /// `ln` of the smallest `K` with `f(x + y) <= K f(x) f(y)` on the grid.
    pub log_grid_k: f64,
    /// Largest log-ratios, descending, at most [`WITNESS_KEEP`].
    pub violation_witnesses: Vec<Witness>,
    pub pairs_scanned: usize,
}

impl SubmultReport {
    pub fn grid_k(&self) -> f64 {
        self.log_grid_k.exp()
    }
}

fn sorted_points(mut v: Vec<u64>) -> Vec<u64> {
    v.retain(|&n| n >= 1);
    v.sort_unstable();
    v.dedup();
    v
}

/// Exact log-ratio on every pair of `xs x ys`. Burst functions also get their
/// midpoints `(s_i + u_i) / 2` up to the grid maximum added to both sets.
pub fn submult_scan(f: &MomentFunction, xs: &[u64], ys: &[u64]) -> Result<SubmultReport> {
    let (mut xs, mut ys) = (xs.to_vec(), ys.to_vec());
    if xs.iter().chain(&ys).any(|&n| n == 0) {
        return Err(Error::InvalidParameter(
            "scan points must be at least 1".into(),
        ));
    }
    if let FnKind::Burst(s) = f.kind() {
        let limit = xs.iter().chain(&ys).copied().max().unwrap_or(0);
        let mids: Vec<u64> = (1..)
            .map_while(|i| s.midpoint(i).filter(|x| *x <= limit))
            .collect();
        xs.extend(&mids);
        ys.extend(&mids);
    }
    let (xs, ys) = (sorted_points(xs), sorted_points(ys));
    if xs.is_empty() || ys.is_empty() {
        return Err(Error::EmptySupport);
    }
    let mut best: Vec<Witness> = xs
        .par_iter()
        .map(|&x| {
            let mut local: Vec<Witness> = ys
                .iter()
                .map(|&y| Witness {
                    x,
                    y,
                    log_ratio: f.log_ratio(x, y),
                })
                .collect();
            keep_top(&mut local);
            local
        })
        .reduce(Vec::new, |mut a, b| {
            a.extend(b);
            keep_top(&mut a);
            a
        });
    keep_top(&mut best);
    Ok(SubmultReport {
        log_grid_k: best[0].log_ratio,
        violation_witnesses: best,
        pairs_scanned: xs.len() * ys.len(),
    })
}

fn keep_top(v: &mut Vec<Witness>) {
    v.sort_by(|a, b| {
        b.log_ratio
            .total_cmp(&a.log_ratio)
            .then(a.x.cmp(&b.x))
            .then(a.y.cmp(&b.y))
    });
    v.truncate(WITNESS_KEEP);
}

/// Sampled `log f(n) / n` with its tail suprema.
#[derive(Debug, Clone, PartialEq)]
pub struct GrowthProfile {
    pub points: Vec<(u64, f64)>,
    /// `(N, sup_{sampled n >= N} log f(n) / n)` per checkpoint.
    pub running_sup_tail: Vec<(u64, f64)>,
}

/// Log-spaced points up to `n`, four per octave, plus `1..=16`.
pub fn log_grid(n: u64) -> Vec<u64> {
    let mut v: Vec<u64> = (1..=16.min(n)).collect();
    let top = (n as f64).log2();
    let mut j = 16u32;
    loop {
        let x = 2f64.powf(j as f64 / 4.0).round() as u64;
        if (j as f64 / 4.0) > top {
            break;
        }
        v.push(x.min(n));
        j += 1;
    }
    v.push(n);
    sorted_points(v)
}

/// Profile of `log f(n) / n` on a log grid up to `n` plus burst ends.
pub fn growth_profile(f: &MomentFunction, n: u64, checkpoints: &[u64]) -> Result<GrowthProfile> {
    if n == 0 || checkpoints.iter().any(|&c| c > n) {
        return Err(Error::InvalidParameter(format!(
            "horizon {n} below a checkpoint"
        )));
    }
    let mut pts = log_grid(n);
    pts.extend(checkpoints.iter().filter(|&&c| c >= 1));
    if let FnKind::Burst(s) = f.kind() {
        pts.extend(s.structural_points(n));
    }
    let pts = sorted_points(pts);
    let points: Vec<(u64, f64)> = pts.iter().map(|&m| (m, f.log_eval(m) / m as f64)).collect();
    // suffix maxima
    let mut suffix = vec![f64::NEG_INFINITY; points.len() + 1];
    for k in (0..points.len()).rev() {
        suffix[k] = suffix[k + 1].max(points[k].1);
    }
    let mut cps = checkpoints.to_vec();
    cps.sort_unstable();
    let running_sup_tail = cps
        .iter()
        .map(|&c| (c, suffix[points.partition_point(|(m, _)| *m < c)]))
        .collect();
    Ok(GrowthProfile {
        points,
        running_sup_tail,
    })
}

/// Outcome of [`classify`].
#[derive(Debug, Clone, PartialEq)]
pub enum Verdict {
    /// Both conditions hold by an analytic argument for the kind.
    SatisfiesC,
    /// Scanned log-ratios keep growing; witnesses sorted descending.
    ViolatesCi(Vec<Witness>),
    /// `log f(n) / n` settles at this positive rate.
    ViolatesCii(f64),
    Inconclusive,
}

impl Verdict {
    pub fn label(&self) -> &'static str {
        match self {
            Verdict::SatisfiesC => "satisfies_c",
            Verdict::ViolatesCi(_) => "violates_c_i",
            Verdict::ViolatesCii(_) => "violates_c_ii",
            Verdict::Inconclusive => "inconclusive",
        }
    }
}

/// Sampling effort for [`classify`].
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifyBudget {
    /// First scan grid reaches `2^base_level`.
    pub base_level: u32,
    /// Each extension multiplies the grid range by `2^level_step`.
    pub level_step: u32,
    /// Grid extensions; ratio maxima must rise across all of them.
    pub extensions: usize,
    /// Growth profile checkpoints `2^c`.
    pub checkpoint_log2: Vec<u32>,
    /// Relative spread under which tail suprema count as settled.
    pub stable_rel: f64,
    /// Rates at or below this are not counted as exponential growth.
    pub rate_floor: f64,
}

impl Default for ClassifyBudget {
    fn default() -> Self {
        Self {
            base_level: 6,
            level_step: 2,
            extensions: 6,
            checkpoint_log2: vec![20, 25, 30, 35, 40],
            stable_rel: 1e-3,
            rate_floor: 1e-6,
        }
    }
}

/// Unbounded-growth heuristic on ratio maxima over nested grids.
pub fn ratio_maxima(
    f: &MomentFunction,
    budget: &ClassifyBudget,
) -> Result<Vec<(u64, SubmultReport)>> {
    (0..budget.extensions)
        .map(|e| {
            let level = budget.base_level + e as u32 * budget.level_step;
            let top = 1u64 << level.min(62);
            let grid = log_grid(top);
            Ok((top, submult_scan(f, &grid, &grid)?))
        })
        .collect()
}

/// Decides the two conditions. Only kinds with an analytic proof can satisfy
/// them; sampling alone never certifies a limsup.
pub fn classify(f: &MomentFunction, budget: &ClassifyBudget) -> Result<Verdict> {
    if matches!(f.kind(), FnKind::Power(_) | FnKind::LogPower(_)) {
        return Ok(Verdict::SatisfiesC);
    }
    let maxima = ratio_maxima(f, budget)?;
    let rising = maxima.len() >= 6
        && maxima
            .windows(2)
            .all(|w| w[1].1.log_grid_k > w[0].1.log_grid_k + 1e-9);
    if rising {
        let (_, last) = maxima.into_iter().last().unwrap();
        return Ok(Verdict::ViolatesCi(last.violation_witnesses));
    }
    let cps: Vec<u64> = budget
        .checkpoint_log2
        .iter()
        .map(|&c| 1u64 << c.min(62))
        .collect();
    let horizon = cps.iter().copied().max().unwrap_or(1);
    let profile = growth_profile(f, horizon, &cps)?;
    let tail = &profile.running_sup_tail;
    if tail.len() >= 3 {
        let last3: Vec<f64> = tail[tail.len() - 3..].iter().map(|(_, v)| *v).collect();
        let rate = last3[2];
        let lo = last3.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = last3.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if lo > budget.rate_floor && (hi - lo) <= budget.stable_rel * hi {
            return Ok(Verdict::ViolatesCii(rate));
        }
    }
    Ok(Verdict::Inconclusive)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_schedule_values() {
        let s = default_burst_schedule();
        assert_eq!(s.burst(1), Some((2, 2)));
        assert_eq!(s.burst(2), Some((16, 8)));
        assert_eq!(s.burst(3), Some((72, 24)));
        assert_eq!(s.margin(3), Some(14));
        assert_eq!(s.len(), DEFAULT_BURSTS);
        s.verify().unwrap();
    }

    #[test]
    fn g_follows_bursts() {
        let s = default_burst_schedule();
        let (s1, u1) = s.burst(1).unwrap();
        assert_eq!(s.g(s1 + u1), u1);
        assert_eq!(s.g(16), s.g(s1 + u1));
        assert_eq!(s.g(1), 0);
        assert_eq!(s.g(3), 1);
        assert_eq!(s.g(12), 2);
        assert_eq!(s.g(24), 10);
        assert_eq!(s.g(u64::MAX), s.cumulative(DEFAULT_BURSTS));
    }

    #[test]
    fn midpoint_ratios_match_margins() {
        let f = burst_fn(default_burst_schedule()).unwrap();
        let FnKind::Burst(s) = f.kind() else {
            unreachable!()
        };
        for i in 1..=20 {
            let x = s.midpoint(i).unwrap();
            assert_eq!(x, (1u64 << (i - 1)) * i as u64 * (i as u64 + 1));
            assert_eq!(f.exact_burst_ratio(x, x), Some((1i128 << (i + 1)) - 2));
        }
    }

    #[test]
    fn explicit_schedule_checks() {
        assert!(BurstSchedule::from_pairs(&[(2, 2), (16, 8), (72, 24)]).is_ok());
        assert!(BurstSchedule::from_pairs(&[(2, 20), (16, 8), (72, 24)]).is_err());
        assert!(BurstSchedule::from_pairs(&[(2, 2), (1, 8)]).is_err());
        let s = BurstSchedule::from_csv_str("i,s_i,u_i\n1,2,2\n2,16,8\n3,72,24\n").unwrap();
        assert_eq!(
            s,
            BurstSchedule::from_pairs(&[(2, 2), (16, 8), (72, 24)]).unwrap()
        );
        assert_eq!(s.g(1000), 34);
        assert!(BurstSchedule::from_csv_str("1,2,2\n3,16,8\n").is_err());
    }

    #[test]
    fn closed_forms() {
        assert!((power_fn(2.0).unwrap().log_eval(4) - 16f64.ln()).abs() < 1e-15);
        assert!((exp_fn(0.1).unwrap().log_eval(10) - 1.0).abs() < 1e-15);
        assert_eq!(power_fn(1.0).unwrap().log_eval(7), 7f64.ln());
        assert!((log_power_fn(1.0).unwrap().log_eval(1) - 3f64.ln().ln()).abs() < 1e-15);
        assert!(power_fn(0.0).is_err() && exp_fn(-1.0).is_err() && log_power_fn(f64::NAN).is_err());
    }

    #[test]
    fn parse_specs() {
        assert_eq!(
            *"power:2".parse::<MomentFunction>().unwrap().kind(),
            FnKind::Power(2.0)
        );
        assert_eq!(
            *"exp:0.1".parse::<MomentFunction>().unwrap().kind(),
            FnKind::Exponential(0.1)
        );
        assert_eq!(
            *"logpow:1".parse::<MomentFunction>().unwrap().kind(),
            FnKind::LogPower(1.0)
        );
        assert!(matches!(
            "burst:default".parse::<MomentFunction>().unwrap().kind(),
            FnKind::Burst(_)
        ));
        for bad in ["power", "power:x", "cube:3", "burst:weird", "power:-1"] {
            assert!(bad.parse::<MomentFunction>().is_err(), "{bad}");
        }
    }

    #[test]
    fn identity_scan_peaks_at_one_one() {
        let f = power_fn(1.0).unwrap();
        let grid: Vec<u64> = (1..=200).collect();
        let r = submult_scan(&f, &grid, &grid).unwrap();
        assert!((r.grid_k() - 2.0).abs() < 1e-12);
        assert_eq!(
            (r.violation_witnesses[0].x, r.violation_witnesses[0].y),
            (1, 1)
        );
    }

    #[test]
    fn exponential_scan_is_flat() {
        let f = exp_fn(0.5).unwrap();
        let grid: Vec<u64> = (1..=64).collect();
        let r = submult_scan(&f, &grid, &grid).unwrap();
        assert!(r.log_grid_k.abs() < 1e-12);
    }

    #[test]
    fn burst_scan_includes_midpoints() {
        let f = burst_fn(default_burst_schedule()).unwrap();
        let r = submult_scan(&f, &[1, 100], &[1, 100]).unwrap();
        assert!(r
            .violation_witnesses
            .iter()
            .any(|w| w.x == 48 && w.y == 48 && w.log_ratio == 14.0));
    }

    #[test]
    fn growth_profiles() {
        let p = growth_profile(&exp_fn(0.1).unwrap(), 1 << 20, &[10, 1000, 1 << 20]).unwrap();
        assert!(p
            .running_sup_tail
            .iter()
            .all(|(_, v)| (v - 0.1).abs() < 1e-15));
        let p = growth_profile(&power_fn(2.0).unwrap(), 1_000_000, &[1_000_000]).unwrap();
        assert!(p.running_sup_tail[0].1 < 3e-5);
        let f = burst_fn(default_burst_schedule()).unwrap();
        let p = growth_profile(&f, 1 << 30, &[1, 1 << 10, 1 << 20, 1 << 30]).unwrap();
        assert!(p.running_sup_tail.windows(2).all(|w| w[1].1 <= w[0].1));
        for i in 1..=10u32 {
            let (s, u) = (default_s(i as usize), default_u(i as usize));
            let got = p.points.iter().find(|(n, _)| *n == s + u).unwrap().1;
            let want = 2.0 * ((1u64 << i) as f64 * (i as f64 - 1.0) + 1.0)
                / ((1u64 << i) as f64 * i as f64 * (i as f64 + 1.0));
            assert!((got - want).abs() < 1e-15, "{i}");
        }
        assert!(growth_profile(&f, 10, &[11]).is_err());
    }

    #[test]
    fn classifier_verdicts() {
        let b = ClassifyBudget::default();
        for p in [0.5, 1.0, 2.0, 3.0] {
            assert_eq!(
                classify(&power_fn(p).unwrap(), &b).unwrap(),
                Verdict::SatisfiesC
            );
        }
        for d in [0.01, 0.1, 1.0] {
            match classify(&exp_fn(d).unwrap(), &b).unwrap() {
                Verdict::ViolatesCii(rate) => assert!((rate - d).abs() < 1e-9),
                v => panic!("{v:?}"),
            }
        }
        match classify(&burst_fn(default_burst_schedule()).unwrap(), &b).unwrap() {
            Verdict::ViolatesCi(w) => assert!(w[0].log_ratio > 1000.0),
            v => panic!("{v:?}"),
        }
        let flat = MomentFunction::custom("sqrt", |n| 0.5 * (n as f64).ln());
        assert_eq!(classify(&flat, &b).unwrap(), Verdict::Inconclusive);
    }

    #[test]
    fn growth_bounds_hold_locally() {
        for f in [
            power_fn(2.0).unwrap(),
            log_power_fn(1.5).unwrap(),
            exp_fn(0.3).unwrap(),
        ] {
            for from in [1u64, 5, 100] {
                let b = f.log_growth_bound(from).unwrap();
                for n in from..from + 200 {
                    let (a, c) = (f.log_eval(n + 1), f.log_eval(n));
                    assert!(a - c <= b + 1e-14 * a.abs().max(1.0));
                }
            }
        }
    }
}
