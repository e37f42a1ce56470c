//! Decoupled weight-decay Adam with bias correction.

use crate::model::GeoDecoderParams;
use crate::numerics::Scalar;

use super::{TrainHyper, TrainerError};

/// First/second moment arrays aligned with the parameter registry, plus the
/// global step counter (number of optimizer updates applied).
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState<S: Scalar> {
    pub step: usize,
    pub m: Vec<Vec<S>>,
    pub v: Vec<Vec<S>>,
}

impl<S: Scalar> OptimizerState<S> {
    pub fn new(params: &GeoDecoderParams<S>) -> Self {
        let zeros: Vec<Vec<S>> =
            params.tensors().iter().map(|t| vec![S::zero(); t.data.len()]).collect();
        OptimizerState { step: 0, m: zeros.clone(), v: zeros }
    }
}

/// One update on a single tensor. `t` counts from 1. `decay` applies the
/// decoupled term `lr * wd * theta` alongside the Adam step, both reading the
/// pre-update value.
#[allow(clippy::too_many_arguments)]
pub(crate) fn adamw_update<S: Scalar>(
    theta: &mut [S],
    grad: &[S],
    m: &mut [S],
    v: &mut [S],
    t: usize,
    lr: S,
    hyper: &TrainHyper,
    decay: bool,
) {
    let b1 = S::from_f64_c(hyper.beta1);
    let b2 = S::from_f64_c(hyper.beta2);
    let eps = S::from_f64_c(1e-8);
    let wd = if decay { S::from_f64_c(hyper.weight_decay) } else { S::zero() };
    let one = S::one();
    let bc1 = one / (one - b1.powi(t as i32));
    let bc2 = one / (one - b2.powi(t as i32));
    for i in 0..theta.len() {
        let g = grad[i];
        m[i] = b1 * m[i] + (one - b1) * g;
        v[i] = b2 * v[i] + (one - b2) * g * g;
        let mh = m[i] * bc1;
        let vh = v[i] * bc2;
        theta[i] = theta[i] - lr * (mh / (vh.sqrt() + eps) + wd * theta[i]);
    }
}

/// Applies one step across every registry tensor. Weight matrices and
/// embeddings (ndim >= 2) decay; biases and norm affines do not. Gradients
/// must be finite.
pub fn adamw_step<S: Scalar>(
    params: &mut GeoDecoderParams<S>,
    grads: &[Vec<S>],
    state: &mut OptimizerState<S>,
    hyper: &TrainHyper,
    lr: f64,
) -> Result<(), TrainerError> {
    debug_assert_eq!(grads.len(), params.tensors().len());
    for (i, g) in grads.iter().enumerate() {
        if let Some(bad) = g.iter().find(|v| !v.is_finite()) {
            return Err(TrainerError::NonFiniteGrad {
                tensor: params.tensors()[i].name.clone(),
                value: bad.to_f64_c(),
            });
        }
    }
    state.step += 1;
    let t = state.step;
    let lr = S::from_f64_c(lr);
    for i in 0..grads.len() {
        let decay = params.tensors()[i].shape.len() >= 2;
        let theta = params.data_mut(i);
        adamw_update(theta, &grads[i], &mut state.m[i], &mut state.v[i], t, lr, hyper, decay);
    }
    Ok(())
}
