//! Parameter storage: one `Arc`-backed array per registry tensor.
//!
//! Binding onto a tape clones the `Arc`s, never the data, so concurrent
//! forward passes share one copy of the weights. The optimizer takes `&mut`
//! and mutates through `Arc::make_mut` under its exclusive borrow.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::numerics::{Scalar, Tape};
use crate::stablehash::mix2;

use super::config::{GeoDecoderConfig, Init};
use super::forward::BoundParams;
use super::ModelError;

#[derive(Debug, Clone)]
pub struct NamedTensor<S: Scalar> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Arc<Vec<S>>,
}

#[derive(Debug, Clone)]
pub struct GeoDecoderParams<S: Scalar> {
    config: GeoDecoderConfig,
    tensors: Vec<NamedTensor<S>>,
}

impl<S: Scalar> GeoDecoderParams<S> {
    /// Random initialization. Each tensor draws from its own substream keyed
    /// by (seed, registry index), so adding text to a prompt or reordering
    /// calls can never shift another tensor's values.
    pub fn init(config: &GeoDecoderConfig, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let tensors = config
            .tensor_specs()
            .into_iter()
            .enumerate()
            .map(|(idx, spec)| {
                let data = match spec.init {
                    Init::Zeros => vec![S::zero(); spec.len()],
                    Init::Ones => vec![S::one(); spec.len()],
                    Init::TruncNormal => {
                        let mut rng = ChaCha8Rng::seed_from_u64(mix2(seed, idx as u64));
                        (0..spec.len()).map(|_| S::from_f64_c(trunc_normal(&mut rng, 0.02))).collect()
                    }
                };
                NamedTensor { name: spec.name, shape: spec.shape, data: Arc::new(data) }
            })
            .collect();
        Ok(GeoDecoderParams { config: config.clone(), tensors })
    }

    /// All-zero weights (LN gains included); for tests of the residual path.
    pub fn zeros(config: &GeoDecoderConfig) -> Result<Self, ModelError> {
        let mut p = Self::init(config, 0)?;
        for t in &mut p.tensors {
            Arc::make_mut(&mut t.data).fill(S::zero());
        }
        Ok(p)
    }

    /// Rebuilds from externally supplied arrays in registry order.
    pub fn from_arrays(
        config: &GeoDecoderConfig,
        arrays: Vec<Vec<S>>,
    ) -> Result<Self, ModelError> {
        config.validate()?;
        let specs = config.tensor_specs();
        if arrays.len() != specs.len() {
            return Err(ModelError::BindMismatch(arrays.len(), specs.len()));
        }
        let tensors = specs
            .into_iter()
            .zip(arrays)
            .map(|(spec, data)| {
                if data.len() != spec.len() {
                    return Err(ModelError::BadConfig(format!(
                        "tensor {} has {} scalars, expected {}",
                        spec.name,
                        data.len(),
                        spec.len()
                    )));
                }
                Ok(NamedTensor { name: spec.name, shape: spec.shape, data: Arc::new(data) })
            })
            .collect::<Result<_, _>>()?;
        Ok(GeoDecoderParams { config: config.clone(), tensors })
    }

    pub fn config(&self) -> &GeoDecoderConfig {
        &self.config
    }

    pub fn tensors(&self) -> &[NamedTensor<S>] {
        &self.tensors
    }

    pub fn n_scalars(&self) -> usize {
        self.tensors.iter().map(|t| t.data.len()).sum()
    }

    pub fn tensor(&self, name: &str) -> Result<&NamedTensor<S>, ModelError> {
        self.tensors
            .iter()
            .find(|t| t.name == name)
            .ok_or_else(|| ModelError::NoSuchTensor(name.to_string()))
    }

    pub fn data_mut(&mut self, index: usize) -> &mut Vec<S> {
        Arc::make_mut(&mut self.tensors[index].data)
    }

    pub fn data_mut_by_name(&mut self, name: &str) -> Result<&mut Vec<S>, ModelError> {
        let idx = self
            .tensors
            .iter()
            .position(|t| t.name == name)
            .ok_or_else(|| ModelError::NoSuchTensor(name.to_string()))?;
        Ok(self.data_mut(idx))
    }

    /// Zeroes every tensor whose name satisfies the predicate; returns how
    /// many were hit.
    pub fn zero_where(&mut self, pred: impl Fn(&str) -> bool) -> usize {
        let mut n = 0;
        for i in 0..self.tensors.len() {
            if pred(&self.tensors[i].name) {
                self.data_mut(i).fill(S::zero());
                n += 1;
            }
        }
        n
    }

    /// Registers every tensor on the tape as a trainable leaf, in registry
    /// order, and returns the id block the forward pass indexes into.
    pub fn bind(&self, tape: &mut Tape<S>) -> Result<BoundParams, ModelError> {
        let ids = self
            .tensors
            .iter()
            .map(|t| tape.param(t.shape.clone(), Arc::clone(&t.data)))
            .collect::<Result<Vec<_>, _>>()?;
        BoundParams::from_ids(ids, &self.config)
    }

    /// Precision change (f32 training vs f64 gradient checking) through f64.
    pub fn cast<T: Scalar>(&self) -> GeoDecoderParams<T> {
        let tensors = self
            .tensors
            .iter()
            .map(|t| NamedTensor {
                name: t.name.clone(),
                shape: t.shape.clone(),
                data: Arc::new(t.data.iter().map(|&v| T::from_f64_c(v.to_f64_c())).collect()),
            })
            .collect();
        GeoDecoderParams { config: self.config.clone(), tensors }
    }
}

/// Normal(0, std) clipped by resampling outside two standard deviations.
fn trunc_normal(rng: &mut ChaCha8Rng, std: f64) -> f64 {
    loop {
        let u1: f64 = rng.gen();
        let u2: f64 = rng.gen();
        let z = (-2.0 * (1.0 - u1).ln()).sqrt() * (std::f64::consts::TAU * u2).cos();
        if z.abs() <= 2.0 {
            return z * std;
        }
    }
}
