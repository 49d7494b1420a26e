//! Estimators for continuous multi-reference alignment.
//!
//! Observations are noisy copies of a band-limited periodic signal, each with
//! its domain rotated by an unknown uniform angle. The crate provides the
//! observation model and rotation-invariant loss ([`model`], [`sampling`]),
//! a bispectrum-inversion method-of-moments estimator ([`bispectrum`]), the
//! rotation-marginalized maximum-likelihood estimator ([`mle`]), and a Monte
//! Carlo risk harness ([`harness`]) with file formats in [`io`].

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bispectrum;
pub mod error;
pub mod harness;
pub mod io;
pub mod mle;
pub mod model;
pub mod rng;
pub mod sampling;
pub mod stats;

pub use error::{MraError, Result};
pub use model::{align, circ_dist, loss, wrap_phase, Alignment, RotationAngle, SignalSpec};
pub use sampling::{sample, sample_noiseless, sample_unrotated, SampleBatch};
