//! Optimal switching control of a hidden Markov chain observed through a
//! Markov-modulated compound Poisson process.
//!
//! The crate is organised bottom-up:
//!
//! * [`model`]: problem data, validation and config files.
//! * [`filter`]: the belief flow between arrivals and the Bayes jump at arrivals.
//! * [`beliefgrid`]: simplex lattices and piecewise-linear interpolation.
//! * [`bellman`]: dynamic-programming operators and the finite/infinite
//!   horizon solvers.
//! * [`strategy`]: switching regions, boundaries and an executable controller.
//! * [`simkit`]: exact simulation and Monte Carlo strategy evaluation.
//!
//! Everything numerical is generic over [`Scalar`] (`f32` or `f64`); the
//! unsuffixed aliases below fix `f64`.

// `!(x > 0)` is used on purpose so that NaN is rejected too
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod beliefgrid;
pub mod bellman;
pub mod bundled;
pub mod filter;
pub mod linalg;
pub mod model;
mod scalar;
pub mod simkit;
pub mod strategy;

pub use scalar::{pairwise_sum, Scalar};

pub type Belief = model::Belief<f64>;
pub type Model = model::SwitchingModel<f64>;
pub type Lattice = beliefgrid::SimplexLattice<f64>;
pub type NodeFunction = beliefgrid::NodeFunction<f64>;
pub type ValueSurface = bellman::ValueSurface<f64>;
pub type StrategyTable = strategy::StrategyTable<f64>;
pub type Controller = strategy::Controller<f64>;
