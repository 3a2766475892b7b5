#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod datasets;
pub mod experiment;
pub mod svg;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] ardr_core::Error),

    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("config: {0}")]
    Config(String),

    #[error("io: {0}")]
    Io(String),
}
