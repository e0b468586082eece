//! Constrained utility maximization on incomplete Brownian markets.
//!
//! `umax` computes optimal trading strategies and value functions for
//! exponential, power and logarithmic utility when strategies are confined to
//! a closed — not necessarily convex — set. The value function is driven by a
//! quadratic backward stochastic differential equation (BSDE) whose generator
//! involves the squared distance to the constraint set; the optimal strategy
//! is a measurable selection from the projection onto that set.
//!
//! The crate is organized along the moving parts of that construction:
//!
//! * [`constraint`] — closed constraint sets, distances, projections and the
//!   deterministic grid selection rule.
//! * [`market`] — drift/volatility model, market price of risk, seeded
//!   Brownian path ensembles and wealth dynamics.
//! * [`drivers`] — the three BSDE generators, growth-bound constants and the
//!   convex-cone comparison generators.
//! * [`lsmc`] — regression Monte Carlo backward solver and BMO norm
//!   estimation.
//! * [`pde`] — a one-dimensional finite-difference solver used as an
//!   independent oracle.
//! * [`portfolio`] — strategy assembly, value functions and the
//!   supermartingale/martingale optimality verifications.

pub mod constraint;
pub mod drivers;
mod error;
pub mod lsmc;
pub mod market;
pub mod paths;
pub mod pde;
pub mod portfolio;

pub use error::{Error, Result};
