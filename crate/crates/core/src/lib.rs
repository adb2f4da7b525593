//! Assignment, estimation and inference for randomized experiments.
//!
//! Designs live in [`design`], point estimators in [`estimate`] and their
//! design-matched variances in [`variance`]. [`analysis`] ties an estimator
//! to a variance choice and produces reports. The [`oracle`] module holds
//! the ground truth used to check everything else.

pub mod analysis;
pub mod design;
pub mod error;
pub mod estimate;
pub mod io;
pub mod lsq;
pub mod model;
pub mod oracle;
pub mod permute;
pub mod rng;
pub mod stats;
pub mod variance;

pub use error::{Error, Result};
