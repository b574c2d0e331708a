//! Desk-scale continual-learning laboratory.
//!
//! The crate trains a small dense network on a task sequence, measures the
//! class-conditioned connectivity between adjacent layers, prunes and freezes
//! weights guided by that measure, and numerically checks the curvature-based
//! forgetting bounds.

pub mod connectivity;
pub mod data;
pub mod error;
pub mod masking;
pub mod nn;
pub mod protocol;
pub mod report;
pub mod tensor;
pub mod theory;

pub use error::{Error, Result};
pub use tensor::Tensor;
