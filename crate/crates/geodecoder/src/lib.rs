//! Desk-scale multimodal map understanding pipeline.
//!
//! The crate generates synthetic city maps, renders them to raw RGB rasters,
//! derives image+text training tasks from the world model, and trains a small
//! prefix-LM transformer with per-modality experts on those tasks. Everything
//! downstream of a seed is deterministic: worlds, rasters, datasets, and
//! training runs reproduce byte for byte.

pub mod cli;
pub mod geo;
pub mod metrics;
pub mod model;
pub mod numerics;
pub mod render;
pub mod taskgen;
pub mod textcodec;
pub mod trainer;
pub mod worldgen;

pub(crate) mod stablehash;

pub use numerics::Scalar;

/// Autodiff tape over the training precision.
pub type Tape32 = numerics::Tape<f32>;
/// Autodiff tape over the verification precision used for gradient checks.
pub type Tape64 = numerics::Tape<f64>;
/// Model parameters in training precision.
pub type Params32 = model::GeoDecoderParams<f32>;
/// Model parameters in verification precision.
pub type Params64 = model::GeoDecoderParams<f64>;
