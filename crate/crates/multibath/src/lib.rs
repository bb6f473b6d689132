// Parameter guards use the negated form `!(x > 0)` so NaN is rejected too;
// index loops over parallel slices stay as loops for symmetry with the math.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
#![allow(clippy::needless_range_loop)]
#![allow(clippy::type_complexity)]

//! Numerical laboratory for two-temperature overdamped Langevin dynamics:
//! ensemble simulation of the coupled fast/slow SDE, construction of the
//! wide-time-scale stationary measure, exact Ornstein-Uhlenbeck solutions
//! for quadratic potentials, KL divergence estimation, log-Sobolev
//! constants, and the convergence-rate envelopes built from them.

pub mod config;
pub mod divergence;
pub mod dynamics;
pub mod gaussian;
pub mod harness;
pub mod linalg;
pub mod lsi_bounds;
pub mod ou_exact;
pub mod potential;
pub mod rng;
pub mod stationary;

pub use gaussian::GaussianMeasure;
pub use potential::{Potential, Quadratic};
