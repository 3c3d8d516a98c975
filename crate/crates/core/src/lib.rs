//! Oblique decision trees and forests whose split functions are trained by
//! minimizing a convex-concave upper bound on the stump loss.
//!
//! The crate is organised bottom-up:
//!
//! - [`dataset`]: LIBSVM parsing, dense homogeneous design matrices, scaling,
//!   bootstrap and class rebalancing.
//! - [`loss`]: leaf distributions, per-leaf losses, optimal leaves and
//!   information gain.
//! - [`co2`]: the pointwise upper bound, its surrogate objective and the
//!   convex-concave optimizer for a single oblique stump.
//! - [`baselines`]: exhaustive axis-aligned splits and an OC1-style
//!   coordinate-descent oblique split.
//! - [`tree`], [`forest`]: breadth-first induction, bagging, prediction and
//!   hyperparameter search.
//! - [`metrics`], [`model`]: evaluation and the versioned model file.

pub mod baselines;
pub mod co2;
pub mod dataset;
mod error;
pub mod forest;
pub mod loss;
pub mod metrics;
pub mod model;
pub mod tree;

pub(crate) mod linalg;
pub mod seeds;

pub use error::{Error, Result};
pub use linalg::argmax;
