//! Entire-space conversion-rate modelling over a simulated recommender funnel.
//!
//! The crate is `no_std` and only needs an allocator. It contains everything
//! that is pure computation:
//!
//! - [`funnel`]: a latent-factor multi-scene world and the cascade funnel
//!   (match, previous stage, rank, impression, click, purchase) with a
//!   closed-form ground-truth oracle.
//! - [`dataset`]: impression-space and previous-stage-space datasets, the
//!   all-scene purchase join, negative sampling and the purchase subset used by
//!   the second head.
//! - [`model`]: the shared-embedding two-head network with multi-head target
//!   attention and a hand-derived backward pass.
//! - [`objectives`]: the losses of every model variant, Adagrad, and the
//!   blended GMV ranking score.
//! - [`eval`]: AUC, calibration against the oracle, and selection-bias
//!   diagnostics.
//! - [`train`]: the training loop shared by all variants.
//!
//! File formats, configuration and the command line live in the `eslm` crate.

#![no_std]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod dataset;
pub mod error;
pub mod eval;
pub mod funnel;
pub mod math;
pub mod model;
pub mod objectives;
pub mod train;

pub use error::{Error, Result};
