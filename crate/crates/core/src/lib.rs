//! Toolkit for the two-species stochastic Ricker competition model.
//!
//! * [`deterministic`]: the competition map `F`, its fixed points, stability,
//!   cycles and numerically verified invariant rectangles.
//! * [`branching`]: the size-dependent branching process, its exact
//!   transition laws, conditional moments and extinction bounds.
//! * [`large_deviation`]: log-mgf of a thinned litter and its Legendre transform.
//! * [`qsd`]: quasi-stationary distributions of the chain restricted to the
//!   interior of the quadrant.
//! * [`lab`]: experiments tracking the QSD as the inhibition `K` shrinks.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod branching;
pub mod deterministic;
pub mod error;
pub mod lab;
pub mod large_deviation;
pub mod model;
pub mod offspring;
pub mod qsd;
pub mod rng;

pub use error::{Error, Result};
pub use model::{ModelParams, NormedState, OffspringLaw, PopulationState, Rect, Species};
