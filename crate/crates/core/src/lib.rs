//! Off-the-grid sparse recovery with random features.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod admissibility;
pub mod assignment;
pub mod certificates;
pub mod error;
pub mod features;
pub mod geometry;
pub mod linalg;
pub mod rng;
pub mod sketch;
pub mod solver;
pub mod tensor;

pub use error::{Error, Result};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
