//! The map-reading transformer: patch and text embedding, a bidirectional
//! prefix with a causal output suffix, and per-modality expert weights inside
//! every block.

mod config;
mod forward;
mod mask;
mod params;

pub use config::{GeoDecoderConfig, Init, TensorSpec};
pub use forward::{
    check_gradients, forward, generate, patchify, Activations, BoundParams, GenerateOpts,
    SequenceInput,
};
pub use mask::build_attention_mask;
pub use params::{GeoDecoderParams, NamedTensor};

use thiserror::Error;

use crate::numerics::NumericsError;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("bad config: {0}")]
    BadConfig(String),
    #[error("raster is {got_w}x{got_h}, model expects {want}x{want}")]
    BadImageSize { got_w: usize, got_h: usize, want: usize },
    #[error("{which} length {got} exceeds budget {budget}")]
    TextBudget { which: &'static str, got: usize, budget: usize },
    #[error("token id {0} outside vocabulary of {1}")]
    TokenOutOfRange(usize, usize),
    #[error("sequence has no positions")]
    EmptySequence,
    #[error("{0} tensor ids bound, model needs {1}")]
    BindMismatch(usize, usize),
    #[error("no tensor named {0}")]
    NoSuchTensor(String),
    #[error("temperature {0} must be positive and finite")]
    BadTemperature(f64),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

/// Position modality: image patches or text tokens. Every expert weight in a
/// block exists once per modality.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Modality {
    Image,
    Text,
}

impl Modality {
    pub const ALL: [Modality; 2] = [Modality::Image, Modality::Text];

    pub fn short(self) -> &'static str {
        match self {
            Modality::Image => "im",
            Modality::Text => "tx",
        }
    }

    pub(crate) fn index(self) -> usize {
        match self {
            Modality::Image => 0,
            Modality::Text => 1,
        }
    }
}
