//! Passage-time laws and generalized moments for discrete-time Markov chains.
//!
//! The crate computes exact first-passage and return-time distributions on
//! finite kernels, evaluates `E f(T)` in log space with certified tail bounds,
//! classifies candidate moment functions `f` by submultiplicativity and
//! subexponential growth, and builds the counterexample chains showing that
//! both conditions are needed for moment finiteness to transfer between
//! states.
//!
//! Module map:
//! - [`chain`]: transition kernels, the two-state and petal families, sampling
//! - [`passage`]: passage laws, taboo propagation, convolution, compounding
//! - [`momentfn`]: moment functions, submultiplicativity scans, growth profiles
//! - [`moments`]: exact and Monte Carlo f-moments with verdicts
//! - [`constructions`]: witness search, heavy-tail pairs, demonstration pipelines
//! - [`cli`]: the `recur-moments` command line front end

pub mod chain;
pub mod cli;
pub mod constructions;
mod error;
pub mod logspace;
pub mod momentfn;
pub mod moments;
pub mod passage;
pub mod rng;

pub use chain::{ParametricChain, TrajectorySample, TransitionKernel, ValidationReport};
pub use error::{Error, Result};
pub use momentfn::{BurstSchedule, MomentFunction, Verdict};
pub use moments::{passage_f_moment, MomentEstimate, MomentPolicy, MomentVerdict};
pub use passage::{AtomicDist, PassageLaw, TailCert};
