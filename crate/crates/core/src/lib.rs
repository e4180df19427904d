//! Synthetic categorical microdata for a target location built only from
//! aggregate frequency tables.
//!
//! The generator fuses two estimates of the joint distribution over the
//! tuple space: a chain of conditional tables from the target location and a
//! Gaussian-copula estimate driven by auxiliary locations. The fused prior is
//! pruned, refined by minimum cross-entropy under the target's marginals, and
//! expanded to an integer population.

pub mod baselines;
pub mod conditional;
pub mod copula;
pub mod distribution;
pub mod error;
pub mod graph;
pub mod maxent;
pub mod metrics;
pub mod pipeline;
pub mod rounding;
pub mod schema;
pub mod synthesis;
pub mod tables;
pub mod truth;

pub use distribution::TupleDistribution;
pub use error::{Error, Result};
pub use schema::{Schema, TupleSpace, Variable};
