//! Simulation and verification laboratory for energy-based stochastic state
//! reduction with a time-dependent coupling.
//!
//! The exact solver draws trajectories directly from independent random data
//! (a terminal energy drawn from the priors plus a Brownian motion) and
//! evaluates the closed-form conditional filter along them. Independent
//! Euler–Maruyama integration and two discretized Bayes filters serve as
//! cross-checks, and the analysis module reproduces the model's analytic
//! predictions: Born statistics, energy conservation, variance bounds,
//! partial measurement, and finite-time collapse via a Brownian-bridge
//! equivalence.

// Negated comparisons like `!(x > 0.0)` are NaN-rejecting validation guards;
// several hot loops index multiple parallel arrays where zips would obscure
// the stride structure.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod analysis;
pub mod config;
pub mod coupling;
pub mod error;
pub mod exact_solver;
pub mod filter_oracles;
pub mod runner;
pub mod sde_integrator;
pub mod spectrum;
pub mod stats;

pub use error::{Error, Result};
