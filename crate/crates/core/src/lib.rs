//! Actuarially fair Pareto-optimal (AFPO) taxation of residual catastrophe losses.
//!
//! The crate is organised bottom-up:
//!
//! * [`disutility`]: CARA and power disutilities with marginal and inverse-marginal calculus.
//! * [`insurance`]: premiums, scenario classes, insurer payments and residual claims.
//! * [`pareto`]: Pareto-optimal taxation rules built from a weight vector by
//!   horizontal addition of inverse marginals and monotone inversion.
//! * [`analytic`]: the closed-form two-region CARA solution and its sensitivity sweeps.
//! * [`solver`]: the histogram-based fairness fixed point on the unit simplex.
//! * [`catsim`]: storm-path Gaussian-copula loss simulation with beta severities.
//! * [`mechanism`]: comparison of financing mechanisms and per-event transfers.
//! * [`io`] and [`pipeline`]: file formats, run configuration and the end-to-end run.

// `!(x > 0.0)` style guards are used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analytic;
pub mod catsim;
pub mod disutility;
mod error;
pub mod insurance;
pub mod io;
pub mod matrix;
pub mod mechanism;
pub mod pareto;
pub mod pipeline;
pub mod quadrature;
pub mod solver;

pub use error::{Error, Result};
pub use matrix::ScenarioMatrix;
