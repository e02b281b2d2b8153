//! Adam with bias correction, and the stepped learning-rate schedule.

use crate::error::{Error, Result};
use crate::nn::ModelParams;
use crate::real::Real;

/// Learning rate for a 1-based epoch: 1e-4 through epoch 20, 1e-5 through
/// epoch 60, 1e-6 afterwards.
pub fn lr_schedule(epoch: u32) -> f64 {
    match epoch {
        0..=20 => 1e-4,
        21..=60 => 1e-5,
        _ => 1e-6,
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T = f64> {
    /// First moments, shaped like the parameters.
    pub m: ModelParams<T>,
    /// Second moments, shaped like the parameters.
    pub v: ModelParams<T>,
    /// Number of updates applied so far.
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl<T: Real> AdamState<T> {
    pub fn new(params: &ModelParams<T>) -> Self {
        AdamState { m: params.zeros_like(), v: params.zeros_like(), step: 0, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// One in-place Adam update. Gradients are checked for finiteness before any
/// parameter is touched.
pub fn adam_step<T: Real>(params: &mut ModelParams<T>, grads: &ModelParams<T>, state: &mut AdamState<T>, lr: f64) -> Result<()> {
    if !params.same_shape(grads) || !params.same_shape(&state.m) || !params.same_shape(&state.v) {
        return Err(Error::Shape("parameters, gradients and Adam moments differ in shape".into()));
    }
    for (k, layer) in grads.layers.iter().enumerate() {
        if layer.weights.iter().chain(&layer.biases).any(|g| !g.is_finite()) {
            return Err(Error::NonFiniteGradient { layer: k });
        }
    }

    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (T::lit(state.beta1), T::lit(state.beta2));
    let (one_b1, one_b2) = (T::lit(1.0 - state.beta1), T::lit(1.0 - state.beta2));
    let corr1 = T::lit(1.0 - state.beta1.powi(t));
    let corr2 = T::lit(1.0 - state.beta2.powi(t));
    let (lr, eps) = (T::lit(lr), T::lit(state.eps));

    let tensors = params.tensors_mut().zip(grads.tensors()).zip(state.m.tensors_mut()).zip(state.v.tensors_mut());
    for (((p, g), m), v) in tensors {
        for k in 0..p.len() {
            let gk = g[k];
            m[k] = b1 * m[k] + one_b1 * gk;
            v[k] = b2 * v[k] + one_b2 * gk * gk;
            let m_hat = m[k] / corr1;
            let v_hat = v[k] / corr2;
            p[k] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}
