//! Mean-field variational Bayesian neural network for binary rupture
//! classification.
//!
//! The crate covers the whole analysis pipeline:
//!
//! - [`math`]: activations, diagonal Gaussians, closed-form KL, Bernoulli
//!   likelihood.
//! - [`random`]: seedable random streams with deterministic child derivation.
//! - [`model`], [`elbo`], [`train`]: the variational network, its ELBO and
//!   exact reparameterization gradient, and Adam training.
//! - [`data`]: CSV ingestion, standardization, class rebalancing, splitting
//!   and a synthetic rupture-label generator.
//! - [`inference`]: posterior predictive scores, F1-optimal threshold,
//!   confusion counts, classification report and uncertainty histogram.
//! - [`importance`]: permutation importance with per-class uncertainty.
//! - [`checkpoint`]: versioned JSON checkpoints.
//!
//! All randomness flows through [`RandomSource`]; identical seeds give
//! bit-identical results.

pub mod checkpoint;
pub mod data;
pub mod elbo;
pub mod error;
pub mod importance;
pub mod inference;
pub mod math;
pub mod model;
pub mod pipeline;
pub mod random;
pub mod train;
pub mod util;

pub use error::{Error, Result};
pub use model::BnnClassifier;
pub use random::RandomSource;
