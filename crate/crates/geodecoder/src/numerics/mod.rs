//! Reverse-mode automatic differentiation on a flat tape.
//!
//! All model math runs through [`Tape`], generic over the scalar type so the
//! same graph code trains in f32 and gradient-checks in f64.

mod gradcheck;
mod scalar;
mod tape;

pub use gradcheck::{grad_check, GradCheckReport};
pub use scalar::Scalar;
pub use tape::{NumericsError, Tape, TensorId};
