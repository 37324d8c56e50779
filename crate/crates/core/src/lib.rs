//! DC power-flow sensitivities, power-flow-controller placement and
//! security-constrained DC optimal power flow.

// `!(x > 0.0)` is used on purpose so NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bounds;
pub mod dcsens;
pub mod error;
mod linalg;
pub mod netmodel;
pub mod opf;
pub mod place_cv;
pub mod place_lp;

pub use error::{Error, Result};
pub use linalg::{numerical_rank, RANK_RTOL};
