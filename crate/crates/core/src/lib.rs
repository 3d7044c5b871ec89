//! Pricing-based noncooperative games: equilibrium computation, inverse
//! price design, feedback regulation of the gradient dynamics, and slow
//! price adaptation towards social optima or QoS regions.

// `!(a < b)` is used on purpose so that NaN lands in the rejecting branch
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod catalog;
pub mod control;
pub mod design;
pub mod error;
pub mod linalg;
pub mod model;
pub mod oracles;
pub mod pricing;
pub mod sampling;
pub mod scenario;
pub mod solver;
pub mod trajectory;

pub use error::{GameError, Result};
pub use model::{ActionVector, ConstraintSet, DiffSettings, GameSpec, Pricing, PriceVector, Utility};
