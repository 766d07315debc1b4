//! Usage-time estimation from uninitialized SRAM startup patterns.
//!
//! The crate turns raw startup dumps into per-bit statistics (probability of
//! one, bit instability), extracts a 56-dimensional usage-correlated feature
//! vector per group of samples, and tunes/trains/evaluates regressors and
//! multi-class classifiers that estimate how long a device has been in use.
//! A synthetic ageing simulator (`agesim`) provides labelled fleets so every
//! stage can be checked without hardware.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod agesim;
pub mod bitcore;
pub mod datasetio;
pub mod error;
pub mod features;
pub mod learners;
pub mod metrics;
pub mod pipeline;
pub mod render;
pub mod seed;

pub mod par;

pub use error::{Error, ErrorKind, Result};

/// Toolkit version recorded in every emitted artifact.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
