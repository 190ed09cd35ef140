//! Monte Carlo solvers for backward doubly stochastic differential equations
//! driven by two Brownian motions and a Poisson random measure, stopped at the
//! first exit time of a jump diffusion from a box.
//!
//! The crate covers the full pipeline:
//!
//! * [`noise`]: reproducible `(W, B, N)` increments on a time grid,
//! * [`forward`]: Euler simulation of the forward jump diffusion and exit times,
//! * [`drivers`] / [`catalog`]: coefficients and assumption checkers,
//! * [`mollify`]: bump-kernel smoothing of non-Lipschitz drivers,
//! * [`backward`]: regression Monte Carlo with per-step Picard iteration,
//! * [`oracle`]: independent closed forms and nested Monte Carlo,
//! * [`diagnostics`]: a priori bound, uniqueness and stability experiments,
//! * [`feynman_kac`]: `u(t, x) = P_t` for the associated integro-differential equation,
//! * [`cli`]: the batch front end behind the `bdsdep` binary.

// `!(x > 0.0)` is used on purpose so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod backward;
pub mod catalog;
pub mod cli;
pub mod diagnostics;
pub mod drivers;
pub mod error;
pub mod feynman_kac;
pub mod forward;
pub mod mollify;
pub mod noise;
pub mod oracle;
pub mod quad;
mod regression;

pub use error::{Error, Result};
pub use regression::BasisSpec;
