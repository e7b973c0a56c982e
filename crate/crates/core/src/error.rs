//! Error type shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("image codec error: {0}")]
    Image(#[from] image::ImageError),

    #[error("invalid cube: {0}")]
    InvalidCube(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid parameter: {0}")]
    InvalidParam(String),

    #[error("mask not conflict-free: points ({},{}) and ({},{}) overlap", (.0).0, (.0).1, (.1).0, (.1).1)]
    MaskConflict((usize, usize), (usize, usize)),

    #[error("superpixel label {0} contains no sample")]
    EmptyLabel(u32),

    #[error("malformed file {path}: {reason}")]
    MalformedFile { path: String, reason: String },

    #[error("config error: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, Error>;
