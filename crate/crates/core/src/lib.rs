//! Rate-distortion theory for the log-likelihood distortion on finite alphabets.

// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod ba;
pub mod cli;
pub mod dual;
pub mod error;
pub mod loglik;
pub mod lp;
pub mod prob;
pub mod rdp;

pub use error::{Error, Result};
