//! Error type shared by every module of the crate.

use thiserror::Error;

/// Errors raised by series construction, denoising, estimation, clustering and prediction.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("non-finite sample {value} at index {index}")]
    NonFinite { index: usize, value: f64 },

    #[error("negative velocity {value} at index {index}")]
    NegativeVelocity { index: usize, value: f64 },

    #[error("series too short: got {len} samples, need at least {min}")]
    TooShort { len: usize, min: usize },

    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("series length {len} is not divisible by {divisor}")]
    Indivisible { len: usize, divisor: usize },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("no observed records to interpolate from")]
    NoRecords,

    #[error("slice index {slice} outside 1..={n}")]
    SliceOutOfRange { slice: usize, n: usize },

    #[error("duplicate slice index {slice}")]
    DuplicateSlice { slice: usize },

    #[error("solver produced a non-finite iterate at iteration {iteration}")]
    Diverged { iteration: usize },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("{0}")]
    Degenerate(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_finite(values: &[f64]) -> Result<()> {
    match values.iter().position(|v| !v.is_finite()) {
        Some(index) => Err(Error::NonFinite {
            index,
            value: values[index],
        }),
        None => Ok(()),
    }
}
