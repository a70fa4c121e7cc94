use thiserror::Error;

use crate::model::TrainHistory;
use crate::volume::Dims;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("dimension mismatch: {left:?} vs {right:?}")]
    DimMismatch { left: Dims, right: Dims },

    #[error("spacing mismatch: {left:?} vs {right:?}")]
    SpacingMismatch { left: [f64; 3], right: [f64; 3] },

    #[error("{name} = {value} is outside its valid range {range}")]
    OutOfRange {
        name: &'static str,
        value: f64,
        range: &'static str,
    },

    #[error("zero variance in {0}")]
    ZeroVariance(&'static str),

    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("undefined: {0}")]
    Undefined(&'static str),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("training diverged at epoch {epoch} (loss {loss})")]
    Diverged {
        epoch: usize,
        loss: f64,
        history: TrainHistory,
    },

    #[error("impossible lesion geometry: {0}")]
    Geometry(String),

    #[error("nifti: {0}")]
    Nifti(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
