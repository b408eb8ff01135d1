//! Structure-constrained mean-reverting diffusion for weakly-paired image
//! enhancement.
//!
//! The crate covers the numerics that do not need a neural network: the
//! conditional Ornstein–Uhlenbeck schedule and its closed-form transitions,
//! the reverse sampler driven by any [`sde::NoisePredictor`], Canny topology
//! priors, the subtraction post-processor, image metrics, and a synthetic
//! phantom generator.

pub mod descriptor;
mod error;
pub mod filters;
pub mod grid;
pub mod io;
pub mod metrics;
pub mod phantom;
pub mod rng;
pub mod saem;
pub mod sde;
pub mod structure;

pub use error::{Error, Result};
pub use grid::{AugmentedState, ImageGrid};
