//! Numerical laboratory for quadratic semimartingale BSDEs
//!
//! ```text
//! dY = Zᵀ dM + dN − F(t, Y, Z) dA − ½ d⟨N⟩,   Y_T = ξ
//! ```
//!
//! on simulated Brownian filtrations, together with the estimates that
//! accompany such equations under exponential-moment data: the a priori
//! bound, norm bounds, comparison, truncation monotonicity, stability, and
//! the true-martingale property of the stochastic exponential of the
//! martingale part.
//!
//! Modules, bottom up: [`kernel`] (grids and scenarios), [`drivers`]
//! (generators, terminal conditions, assumption probes), [`solver`]
//! (regression solver, nested Monte Carlo oracle, exponential-transform
//! reference, truncation ladder), [`analytics`] (bounds and checks) and
//! [`experiments`] (configuration and runner).

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod analytics;
pub mod drivers;
pub mod error;
pub mod experiments;
pub mod kernel;
pub mod solver;
pub mod stats;

pub use error::{LabError, Result};
