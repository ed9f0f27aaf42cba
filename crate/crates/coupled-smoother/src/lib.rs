//! Unbiased smoothing in general state-space models.
//!
//! This crate estimates smoothing expectations `E[h(x_{0:T}) | y_{1:T}]` without
//! bias by coupling two conditional particle filter (CPF) chains and debiasing
//! their ergodic averages with a telescoping correction. Each estimate is cheap
//! to replicate independently, so replicates run in parallel and a central
//! limit theorem over replicates yields honest confidence intervals.
//!
//! The main entry points are:
//!
//! - [`rhee_glynn::run_replicates`]: produce `R` independent unbiased estimates
//!   of a smoothing functional, with summary statistics and confidence bounds.
//! - [`rhee_glynn::meeting_time_survey`]: sample the meeting time of coupled
//!   CPF chains, used to tune the estimator.
//! - [`cpf`]: the CPF and coupled-CPF Markov kernels themselves.
//! - [`models`]: a small gallery of state-space models (linear Gaussian
//!   auto-regression, a highly-informative-observation variant, and a
//!   stochastic Lotka–Volterra predator–prey model).
//! - [`kalman`]: exact filtering/smoothing for linear Gaussian models, used as
//!   ground truth in tests and experiments.
//! - [`baselines`]: plain particle-filter and fixed-lag smoothers for
//!   comparisons at matched cost.
//!
//! Replicate-level parallelism uses rayon and is enabled by the default
//! `parallel` feature; disabling it yields a purely sequential build with
//! bit-identical output.

pub mod baselines;
pub mod cpf;
pub mod error;
pub mod kalman;
pub mod models;
pub mod report;
pub mod resampling;
pub mod rhee_glynn;
pub mod ssm;
pub mod stats;
pub mod stream;

pub use error::{Error, Result};
