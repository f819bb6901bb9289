use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{Element, Tensor};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OptimError {
    #[error("parameter {index}: dims {param:?} vs gradient/state {other:?}")]
    ShapeMismatch {
        index: usize,
        param: Vec<usize>,
        other: Vec<usize>,
    },
    #[error("{params} parameters but {grads} gradients")]
    CountMismatch { params: usize, grads: usize },
    #[error("non-finite gradient for parameter {0}")]
    NonFiniteGradient(usize),
    #[error("iteration {iter} beyond schedule length {total}")]
    IterOutOfRange { iter: u64, total: u64 },
    #[error("schedule length must be positive")]
    EmptySchedule,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    /// Settings used for the Wasserstein critic and its generator.
    pub const WGAN: AdamConfig = AdamConfig {
        beta1: 0.5,
        beta2: 0.9,
        eps: 1e-8,
    };

    /// Settings used for DCGAN.
    pub const DCGAN: AdamConfig = AdamConfig {
        beta1: 0.5,
        beta2: 0.999,
        eps: 1e-8,
    };
}

/// Per-parameter first/second moments and the step counter.
#[derive(Debug, Clone)]
pub struct AdamState<T: Element = f32> {
    pub config: AdamConfig,
    step: u64,
    m: Vec<Tensor<T>>,
    v: Vec<Tensor<T>>,
}

impl<T: Element> AdamState<T> {
    pub fn new(config: AdamConfig, params: &[Tensor<T>]) -> Self {
        Self {
            config,
            step: 0,
            m: params.iter().map(|p| Tensor::zeros(p.dims())).collect(),
            v: params.iter().map(|p| Tensor::zeros(p.dims())).collect(),
        }
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn moments(&self) -> (&[Tensor<T>], &[Tensor<T>]) {
        (&self.m, &self.v)
    }
}

/// One bias-corrected Adam update applied in place.
///
/// Validation happens before any parameter is touched, so a failed step
/// leaves both `params` and `state` unchanged.
pub fn adam_step<T: Element>(
    params: &mut [Tensor<T>],
    grads: &[Tensor<T>],
    state: &mut AdamState<T>,
    lr: f64,
) -> Result<(), OptimError> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(OptimError::CountMismatch {
            params: params.len(),
            grads: grads.len(),
        });
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        for other in [g.dims(), state.m[i].dims()] {
            if p.dims() != other {
                return Err(OptimError::ShapeMismatch {
                    index: i,
                    param: p.dims().to_vec(),
                    other: other.to_vec(),
                });
            }
        }
        if !g.is_finite() {
            return Err(OptimError::NonFiniteGradient(i));
        }
    }

    state.step += 1;
    let c = state.config;
    let t = state.step as i32;
    let bc1 = 1.0 - c.beta1.powi(t);
    let bc2 = 1.0 - c.beta2.powi(t);
    let (b1, b2) = (T::from_f64(c.beta1), T::from_f64(c.beta2));
    let (one_b1, one_b2) = (T::from_f64(1.0 - c.beta1), T::from_f64(1.0 - c.beta2));
    let step_size = T::from_f64(lr / bc1);
    let inv_sqrt_bc2 = T::from_f64(1.0 / bc2.sqrt());
    let eps = T::from_f64(c.eps);

    for ((p, g), (m, v)) in params
        .iter_mut()
        .zip(grads)
        .zip(state.m.iter_mut().zip(state.v.iter_mut()))
    {
        for (((pv, &gv), mv), vv) in p
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .zip(m.data_mut())
            .zip(v.data_mut())
        {
            *mv = b1 * *mv + one_b1 * gv;
            *vv = b2 * *vv + one_b2 * gv * gv;
            let denom = vv.sqrt() * inv_sqrt_bc2 + eps;
            *pv = *pv - step_size * *mv / denom;
        }
    }
    Ok(())
}

/// `lr0 * (1 - iter / total)`: linear decay reaching zero at `total`.
pub fn lr_linear_decay(lr0: f64, iter: u64, total: u64) -> Result<f64, OptimError> {
    if total == 0 {
        return Err(OptimError::EmptySchedule);
    }
    if iter > total {
        return Err(OptimError::IterOutOfRange { iter, total });
    }
    Ok(lr0 * (1.0 - iter as f64 / total as f64))
}
