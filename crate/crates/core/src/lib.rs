//! State estimation with iterative bad-data removal, and the synthesis and
//! analysis of data-framing attacks against it.

// `!(x > 0.0)` is used deliberately so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod acmodel;
pub mod attack;
pub mod dcmodel;
pub mod error;
pub mod estimator;
pub mod linalg;
pub mod netmodel;
pub mod observability;
pub mod oracle;
pub mod rng;
pub mod sim;

pub use error::{Error, ParseError, Result};
