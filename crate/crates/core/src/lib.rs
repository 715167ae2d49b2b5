//! Debiased recommendation under exposure interference.
//!
//! A user's response to an item can depend on which neighboring user-item pairs were
//! exposed. This crate represents that neighborhood exposure as a per-pair treatment `g`,
//! estimates prediction losses that target a chosen distribution over `g`, and trains
//! factor models against those estimates.

// `!(x > 0.0)` is used on purpose so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod data;
pub mod error;
pub mod estimators;
pub mod eval;
pub mod experiment;
pub mod kernels;
pub mod learning;
pub mod loss;
pub mod neighborhood;
pub mod numeric;
pub mod pipeline;
pub mod propensity;
pub mod synth;
pub mod textfmt;
pub mod verify;

pub use error::{Error, Result};
