use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::ops::ModelParams;
use crate::Scalar;

pub const DEFAULT_LR: f64 = 1e-3;
pub const DEFAULT_WEIGHT_DECAY: f64 = 0.02;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self { lr: DEFAULT_LR, beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: DEFAULT_WEIGHT_DECAY }
    }
}

/// First and second moments for every trainable tensor, in parameter order.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimState<T> {
    pub config: AdamWConfig,
    pub step: u64,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Scalar> OptimState<T> {
    pub fn new(params: &ModelParams<T>, config: AdamWConfig) -> Self {
        let zeros = |t: &crate::ops::ParamTensor<T>| {
            if t.is_trainable() {
                alloc::vec![T::zero(); t.numel()]
            } else {
                Vec::new()
            }
        };
        Self {
            config,
            step: 0,
            m: params.iter().map(zeros).collect(),
            v: params.iter().map(zeros).collect(),
        }
    }
}

/// One AdamW step at learning rate `lr`, using the gradients stored on
/// `params`. Weight decay shrinks the weights directly and never enters the
/// moment estimates.
pub fn adamw_step<T: Scalar>(params: &mut ModelParams<T>, state: &mut OptimState<T>, lr: f64) {
    state.step += 1;
    let c = state.config;
    let t = state.step as i32;
    let bc1 = 1.0 - num_traits::Float::powi(c.beta1, t);
    let bc2 = 1.0 - num_traits::Float::powi(c.beta2, t);
    let (b1, b2) = (T::of(c.beta1), T::of(c.beta2));
    let (ob1, ob2) = (T::one() - b1, T::one() - b2);
    let decay = T::of(1.0 - lr * c.weight_decay);
    let step = T::of(lr / bc1);
    let inv_bc2 = T::of(1.0 / bc2);
    let eps = T::of(c.eps);
    for (k, tensor) in params.iter_mut().enumerate() {
        if !tensor.is_trainable() {
            continue;
        }
        let (m, v) = (&mut state.m[k], &mut state.v[k]);
        let (p, g) = tensor.values_and_grad_mut();
        for i in 0..p.len() {
            let gi = g[i];
            m[i] = b1 * m[i] + ob1 * gi;
            v[i] = b2 * v[i] + ob2 * gi * gi;
            p[i] = p[i] * decay - step * m[i] / ((v[i] * inv_bc2).sqrt() + eps);
        }
    }
}

/// `lr0 * (1 + cos(pi * step / total)) / 2`; `step` is clamped to `total`.
pub fn cosine_lr(step: u64, total: u64, lr0: f64) -> f64 {
    if total == 0 {
        return lr0;
    }
    let t = step.min(total) as f64 / total as f64;
    lr0 * 0.5 * (1.0 + num_traits::Float::cos(core::f64::consts::PI * t))
}
