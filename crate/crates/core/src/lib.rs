//! Unsupervised unlearning of concept drift.
//!
//! A frozen autoencoder models the pre-drift data distribution. Once drift
//! is detected, an input map `f` is fitted on a small unlabeled post-drift
//! window so that transformed samples are reconstructed well again, while an
//! L1 penalty keeps `f` close to the identity. Downstream models never see a
//! retraining step; they consume `f(x)` instead of `x`.
//!
//! The crate is `no_std` (with `alloc`). File formats, the bundled digits
//! data and the command line live in the `cdu` companion crate.
//!
//! Module map:
//! - [`nn`]: dense layers, reverse-mode gradients, adaptive-moment optimizer.
//! - [`autoencoder`]: the distribution model and its feature scaler.
//! - [`unlearner`]: the corrective map and its regularized objective.
//! - [`driftmon`]: ground-truth and reconstruction-error drift detectors.
//! - [`downstream`]: logistic regression, virtual sensors and their metrics.
//! - [`streams`]: fault injection, synthetic sensor streams, k-fold splits.
//! - [`protocol`]: the five-step evaluation of one drift scenario.

#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod autoencoder;
pub mod downstream;
pub mod driftmon;
pub mod error;
pub mod linalg;
pub mod nn;
pub mod protocol;
pub mod rng;
pub mod streams;
pub mod unlearner;

pub use error::{Error, Result};
pub use linalg::Matrix;
