//! L1-penalized conditional and multinomial logistic regression for
//! case-control studies with several case subtypes.

pub mod cond_logit;
pub mod design;
pub mod metrics;
pub mod error;
pub mod multinom;
pub mod select;
pub mod simgen;
pub mod solver;

pub use error::{Error, Result};

/// Coefficients with absolute value at or below this are treated as zero.
pub const ZERO_EPS: f64 = 1e-8;
