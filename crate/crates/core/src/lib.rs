//! Maximum-entropy regularized segmentation losses, a small trainable
//! segmentation network, uncertainty and calibration metrics, and synthetic and
//! NIfTI data handling.
//!
//! Numeric code is generic over [`Real`] (`f32` or `f64`); the aliases below
//! fix the scalar to `f64`, with `*F32` variants for single precision.

pub mod data;
pub mod error;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod rng;
pub mod scalar;
pub mod volume;

pub use error::{Error, Result};
pub use scalar::{Real, ScalarKind};

pub type Volume = volume::Volume<f64>;
pub type ProbMap = volume::ProbMap<f64>;
pub type ModelParams = model::ModelParams<f64>;
pub type Checkpoint = model::Checkpoint<f64>;
pub type LossEval = losses::LossEval<f64>;

pub type VolumeF32 = volume::Volume<f32>;
pub type ProbMapF32 = volume::ProbMap<f32>;
pub type ModelParamsF32 = model::ModelParams<f32>;
pub type CheckpointF32 = model::Checkpoint<f32>;

pub use volume::{BinaryMask, Connectivity, Dims, Geometry, LabelMap};
