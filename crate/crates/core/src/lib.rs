//! Bayesian learning-curve extrapolation.
//!
//! Two approximate inference routes share one parametric curve prior
//! ([`prior`]): an affine-invariant ensemble MCMC sampler ([`mcmc`]) and a
//! small transformer trained on synthetic prior curves that predicts a
//! discretized posterior predictive distribution in a single forward pass
//! ([`pfn`]). [`normalize`] maps arbitrary metrics into the prior's `[0, 1]`
//! increasing convention, [`eval`] scores predictive distributions on
//! censored curves and [`earlystop`] replays sequential model selection
//! under predictive or heuristic termination policies.

pub mod earlystop;
pub mod eval;
pub mod mcmc;
pub mod normalize;
pub mod pfn;
pub mod prior;
