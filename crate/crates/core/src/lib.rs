//! Converse-optimal stochastic control benchmarks.
//!
//! Instances are built so that a prescribed quadratic value function and its
//! feedback policy are exactly optimal. The crate generates such instances,
//! validates them, simulates them under common random numbers and scores
//! arbitrary policies against the analytic optimum.

// `!(x > 0.0)` is used on purpose throughout: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod eval;
pub mod families;
pub mod generator;
pub mod linalg;
pub mod par;
pub mod qg;
pub mod rng;
pub mod sim;

pub use error::{Error, Result};
