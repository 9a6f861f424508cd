//! Epistemic uncertainty for a pre-trained model through an active subspace
//! of its weights.
//!
//! The pipeline: sample loss gradients around the pre-trained weights
//! ([`subspace`]), keep the top eigendirections of their uncentered
//! covariance, fit a mean-field Gaussian over the subspace coordinates
//! ([`vi`]), then draw an ensemble of full-weight models and evaluate it
//! ([`inference`]). [`nnkit`] provides the small sequence-VAE everything is
//! demonstrated on, and [`partition`] selects which weights are stochastic.

pub mod error;
pub mod inference;
pub mod nnkit;
pub mod partition;
pub mod seed;
pub mod subspace;
pub mod vi;

pub use error::{Error, Result};
