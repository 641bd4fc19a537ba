use rand::Rng;

use super::{ParametricChain, TransitionKernel};
use crate::error::{Error, Result};
use crate::passage::AtomicDist;
use crate::rng::{self, StreamRng};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PassageTime {
    Hit(u64),
    Censored(u64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TrajectorySample {
    pub passage_time: PassageTime,
    /// Transitions drawn; a petal excursion counts once.
    pub steps_used: u64,
}

impl TrajectorySample {
    pub fn hit(&self) -> Option<u64> {
        match self.passage_time {
            PassageTime::Hit(t) => Some(t),
            PassageTime::Censored(_) => None,
        }
    }

    pub fn is_censored(&self) -> bool {
        matches!(self.passage_time, PassageTime::Censored(_))
    }

    /// The hitting time, or the cap for censored samples.
    pub fn time_or_cap(&self) -> u64 {
        match self.passage_time {
            PassageTime::Hit(t) | PassageTime::Censored(t) => t,
        }
    }
}

/// Draws passage times `T` from a fixed start to a fixed target.
pub trait PassageSampler: Sync {
    /// One draw, censored once the elapsed time reaches `cap` without a hit.
    fn sample_with(&self, rng: &mut StreamRng, cap: u64) -> TrajectorySample;
}

fn cumulative(weights: impl IntoIterator<Item = f64>) -> Vec<f64> {
    let mut acc = 0.0;
    let mut c: Vec<f64> = weights
        .into_iter()
        .map(|w| {
            acc += w;
            acc
        })
        .collect();
    if let Some(last) = c.last_mut() {
        *last = f64::INFINITY;
    }
    c
}

#[inline]
fn pick(cum: &[f64], u: f64) -> usize {
    cum.partition_point(|&c| c <= u)
}

/// State-by-state simulation on an explicit kernel.
#[derive(Debug, Clone)]
pub struct KernelSampler {
    targets: Vec<Vec<usize>>,
    cum: Vec<Vec<f64>>,
    from: usize,
    to: usize,
}

impl KernelSampler {
    pub fn new(kernel: &TransitionKernel, from: usize, to: usize) -> Result<Self> {
        kernel.check_index(from)?;
        kernel.check_index(to)?;
        kernel.ensure_valid()?;
        Ok(Self {
            targets: kernel
                .rows()
                .iter()
                .map(|r| r.iter().map(|e| e.0).collect())
                .collect(),
            cum: kernel
                .rows()
                .iter()
                .map(|r| cumulative(r.iter().map(|e| e.1)))
                .collect(),
            from,
            to,
        })
    }

    pub fn from_names(kernel: &TransitionKernel, from: &str, to: &str) -> Result<Self> {
        Self::new(kernel, kernel.index_of(from)?, kernel.index_of(to)?)
    }
}

impl PassageSampler for KernelSampler {
    fn sample_with(&self, rng: &mut StreamRng, cap: u64) -> TrajectorySample {
        let mut state = self.from;
        let mut t = 0;
        while t < cap {
            let k = pick(&self.cum[state], rng.gen::<f64>());
            state = self.targets[state][k];
            t += 1;
            if state == self.to {
                return TrajectorySample {
                    passage_time: PassageTime::Hit(t),
                    steps_used: t,
                };
            }
        }
        TrajectorySample {
            passage_time: PassageTime::Censored(cap),
            steps_used: t,
        }
    }
}

/// Macro-step simulation of a petal chain between states `0` and `1`: a
/// petal excursion is drawn as a single length from `u1` or `u2`.
#[derive(Debug, Clone)]
pub struct PetalSampler {
    p: f64,
    lengths: [Vec<u64>; 2],
    cum: [Vec<f64>; 2],
    from: u8,
    to: u8,
}

impl PetalSampler {
    pub fn new(u1: &AtomicDist, u2: &AtomicDist, p: f64, from: &str, to: &str) -> Result<Self> {
        let parse = |s: &str| match s {
            "0" => Ok(0u8),
            "1" => Ok(1u8),
            other => Err(Error::InvalidState(other.to_string())),
        };
        if u1.is_empty() || u2.is_empty() {
            return Err(Error::EmptySupport);
        }
        Ok(Self {
            p,
            lengths: [u1.atoms().to_vec(), u2.atoms().to_vec()],
            cum: [
                cumulative(u1.normalized_weights()),
                cumulative(u2.normalized_weights()),
            ],
            from: parse(from)?,
            to: parse(to)?,
        })
    }
}

impl PassageSampler for PetalSampler {
    fn sample_with(&self, rng: &mut StreamRng, cap: u64) -> TrajectorySample {
        let mut state = self.from;
        let mut t = 0u64;
        let mut steps = 0;
        while t < cap {
            steps += 1;
            if state == 0 {
                state = 1;
                t += 1;
            } else if rng.gen::<f64>() < self.p {
                state = 0;
                t += 1;
            } else {
                let side = usize::from(rng.gen::<bool>());
                let k = pick(&self.cum[side], rng.gen::<f64>());
                t = t.saturating_add(self.lengths[side][k]);
            }
            if state == self.to {
                let passage_time = if t <= cap {
                    PassageTime::Hit(t)
                } else {
                    PassageTime::Censored(cap)
                };
                return TrajectorySample {
                    passage_time,
                    steps_used: steps,
                };
            }
        }
        TrajectorySample {
            passage_time: PassageTime::Censored(cap),
            steps_used: steps,
        }
    }
}

/// Either kind of chain accepted by [`sample_passage`].
#[derive(Debug, Clone, Copy)]
pub enum ChainRef<'a> {
    Kernel(&'a TransitionKernel),
    Parametric(&'a ParametricChain),
}

impl<'a> From<&'a TransitionKernel> for ChainRef<'a> {
    fn from(k: &'a TransitionKernel) -> Self {
        ChainRef::Kernel(k)
    }
}

impl<'a> From<&'a ParametricChain> for ChainRef<'a> {
    fn from(c: &'a ParametricChain) -> Self {
        ChainRef::Parametric(c)
    }
}

impl ChainRef<'_> {
    pub fn sampler(&self, from: &str, to: &str) -> Result<Box<dyn PassageSampler>> {
        Ok(match *self {
            ChainRef::Kernel(k) => Box::new(KernelSampler::from_names(k, from, to)?),
            ChainRef::Parametric(ParametricChain::TwoState { p }) => {
                let k = super::build_two_state(*p)?;
                Box::new(KernelSampler::from_names(&k, from, to)?)
            }
            ChainRef::Parametric(ParametricChain::Petal { u1, u2, p }) => {
                Box::new(PetalSampler::new(u1, u2, *p, from, to)?)
            }
        })
    }
}

/// One passage time of `to` from `from` (a return time when they coincide).
pub fn sample_passage<'a>(
    chain: impl Into<ChainRef<'a>>,
    from: &str,
    to: &str,
    cap: u64,
    seed: u64,
) -> Result<TrajectorySample> {
    if cap == 0 {
        return Err(Error::InvalidParameter("cap must be >= 1".into()));
    }
    let sampler = chain.into().sampler(from, to)?;
    Ok(sampler.sample_with(&mut rng::stream(seed, 0), cap))
}
