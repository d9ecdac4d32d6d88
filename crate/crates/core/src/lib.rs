//! Cutting-plane solvers for strongly convex problems: the single-stage
//! QCSC and Kelley methods, and the multistage SQDP (quadratic cuts) and
//! SDDP (affine cuts) decomposition engine, with brute-force oracles and a
//! benchmark harness.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bench;
pub mod cli;
pub mod error;
pub mod io;
pub mod model;
pub mod oracle;
pub mod qcsc;
pub mod qp;
pub mod sqdp;
pub mod stage;

pub use error::{Error, Result};
