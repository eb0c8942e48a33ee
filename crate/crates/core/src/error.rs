use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite value in layer {layer}")]
    NonFinite { layer: usize },

    #[error("non-finite loss at alpha {alpha:?}")]
    NonFiniteSurface { alpha: Vec<f64> },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("value {value} lies outside the loss domain: {reason}")]
    Domain { value: f64, reason: &'static str },

    #[error(
        "loss value {value} is not representable; the implicit activation has minimum {v_star}"
    )]
    Unrepresentable { value: f64, v_star: f64 },

    #[error("first-layer embedding is not injective (min pairwise distance {min_distance:e})")]
    NotInjective { min_distance: f64 },

    #[error("{path}: {message} (at byte offset {offset})")]
    Format {
        path: PathBuf,
        offset: usize,
        message: String,
    },

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}
