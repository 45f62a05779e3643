//! Evidential expert classifiers fused by a trainable gating network.
pub mod diff;
pub mod error;
pub mod evidential;
pub mod expert;
pub mod gate;
pub mod harness;
pub mod metrics;
pub mod simdata;

pub use error::{Error, Result};
