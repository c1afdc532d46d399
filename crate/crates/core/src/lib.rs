//! Critical killed branching random walk: criticality calibration, exact
//! strip solvers, and reproducible Monte Carlo.
//!
//! The crate is organised around five layers:
//!
//! * [`step_model`]: step-law families, Laplace transforms, the tilt point
//!   `rho`, criticality calibration to `phi(rho) = 1/b`, and the tilted
//!   (centered) step law.
//! * [`walk`]: single random walks between two barriers: Monte Carlo
//!   functionals (exit side, overshoot, undershoot, weighted Green sums) and
//!   exact absorbing-chain solvers on integer strips.
//! * [`brw`]: the `b`-ary branching random walk with a kill barrier at zero
//!   and optional counting/absorbing levels, plus exact lattice recursions
//!   for its first/second moments and strip survival.
//! * [`estimators`]: tail curves, many-to-one importance-sampled moments,
//!   scaled band statistics, level choices and the two-stage rare-event
//!   estimator.
//! * [`seed`] / [`parallel`]: counter-based seed derivation and a
//!   deterministic block-parallel replication driver, so results are
//!   byte-identical regardless of worker count.

// Validation guards are written as negated comparisons (`!(x > 0.0)`) so
// that NaN fails them.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod acceptance;
pub mod brw;
pub mod error;
pub mod estimators;
pub mod linalg;
pub mod parallel;
pub mod seed;
pub mod step_model;
pub mod walk;

pub use error::{Error, Result};
pub use step_model::{StepFamily, StepModel, TiltedStep};
