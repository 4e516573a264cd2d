//! Online multi-object tracking built from a cost-sensitive correlation-filter
//! tracker per target and dual (spatial + temporal) attention networks for
//! re-associating lost targets with new detections.

// Negated comparisons below are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod checkpoint;
pub mod config;
pub mod dman;
pub mod error;
pub mod features;
pub mod filter;
pub mod imaging;
pub mod metrics;
pub mod motio;
pub mod pipeline;
pub mod sot;

pub use error::{Error, Result};
