use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("point ({x:.3}, {y:.3}, {z:.3}) mm lies outside the volume")]
    OutsideVolume { x: f64, y: f64, z: f64 },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("kernel footprint exceeds input: {0}")]
    Footprint(String),

    #[error("center lies outside the contour; radii are undefined")]
    CenterOutsideContour,

    #[error("degenerate geometry: {0}")]
    Degenerate(String),

    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },

    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
