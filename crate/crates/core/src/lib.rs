//! Planar musculoskeletal biped balance simulator driven by hierarchical
//! sampling-based control.

// Negated comparisons are used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod analysis;
pub mod bayesopt;
pub mod biped;
pub mod cost;
pub mod error;
pub mod exo;
pub mod harness;
pub mod lowctl;
pub mod muscle;
pub mod planner;
pub mod stats;

pub use error::{Error, Result};
