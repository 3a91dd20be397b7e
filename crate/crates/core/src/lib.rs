//! Stochastic primal-dual solvers for deep hashing with W-type
//! regularization, together with the model, data, evaluation and
//! verification pieces needed to run them end to end.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod data;
pub mod error;
pub mod metrics;
pub mod model;
pub mod numerics;
pub mod optimizer;
pub mod par;
pub mod problem;
pub mod regularizer;
pub mod verify;

pub use error::{Error, Result};
