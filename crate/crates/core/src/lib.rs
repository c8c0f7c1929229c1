//! Kernel machines and shallow neural networks trained with a generalized
//! quadratic loss, in which per-pattern errors are coupled through an RBF
//! pattern-similarity matrix `S`.

// `!(x > 0.0)` deliberately rejects NaN as well
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baseline;
pub mod budget;
pub mod data;
pub mod error;
pub mod eval;
pub mod kernel;
pub mod model;
pub mod nn;
pub mod predictor;
pub mod report;
pub mod rng;
pub mod svm_dual;
pub mod svm_primal;

pub use error::{Error, Result};
