#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod engine;
pub mod error;
pub mod kernels;
pub mod linalg;
pub mod metrics;
pub mod neighbors;
pub mod objectives;
pub mod oracles;

pub use error::{Error, Result};
