//! Simulation and verification of fixed points of the inhomogeneous smoothing
//! transform `X =d C + Σ T_i X_i` on the weighted branching tree.

// Comparisons are written `!(x > 0.0)` on purpose so that NaN is rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod law;
pub mod model;
pub mod rng;

pub use error::{Error, Result};
pub use law::{Law, Pmf};
pub use model::{BasicSequenceModel, ModelKind, RealizedSequence};
pub use rng::RngStream;
pub mod branching;
pub mod output;
pub mod spectral;
pub mod examples;
pub mod solutions;
pub mod verify;

/// Crate version, recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
