//! Numerical laboratory for convergence rates in the weak invariance
//! principle for Markov walks.
//!
//! The crate turns the spectral-gap picture of a Markov walk into
//! executable quantities:
//!
//! * [`chains`] — the three sampleable example processes (finite chain,
//!   autoregressive walk with Bernoulli noise, stochastic recursion) and
//!   their observable sequences;
//! * [`operator`] — perturbed transition operators `P_t g = P(e^{itf} g)`,
//!   the spectral decomposition `P = Π + Q`, and the mixing constants
//!   λ₀(x), λ₁, λ₂ they induce;
//! * [`moments`] — exact μ and σ² (resolvent and covariance-series routes),
//!   closed forms for the AR and recursion examples, variance-homogeneity
//!   profiles and covariance-decay checks;
//! * [`partition`] — the dyadic Cantor-like split of each block
//!   [2^k, 2^{k+1}) into islands and gaps, plus the rate exponents
//!   β*(α) and ρ*(α);
//! * [`mixing`] — joint characteristic functions of past/future sum blocks
//!   as operator products, and their factorization defect against the
//!   λ₀e^{−λ₁·gap}(1+max card)^{λ₂M} envelope;
//! * [`coupling`] — Prokhorov-distance oracles, the compact-support
//!   smoothing sampler, and the per-island quantile coupling between a
//!   sampled path and Gaussian partial sums;
//! * [`rates`] — Monte-Carlo distance curves over N and log-log rate fits
//!   with bootstrap confidence intervals.

pub mod chains;
pub mod config;
pub mod coupling;
pub mod mixing;
pub mod moments;
pub mod operator;
pub mod partition;
pub mod rates;
pub mod rng;
