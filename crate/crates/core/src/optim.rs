//! Adam with bias correction and optional global-norm gradient clipping.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;
pub const DEFAULT_LR: f64 = 2e-4;

/// Moment estimates, one buffer per parameter in parameter order. Kept in
/// f64 regardless of the model precision.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub grad_clip: Option<f64>,
    state: AdamState,
}

impl Adam {
    pub fn new<S: Scalar>(params: &[Tensor<S>], lr: f64) -> Self {
        let zeros = || params.iter().map(|p| vec![0.0; p.numel()]).collect();
        Adam {
            lr,
            grad_clip: None,
            state: AdamState { step: 0, m: zeros(), v: zeros() },
        }
    }

    pub fn with_grad_clip(mut self, max_norm: Option<f64>) -> Self {
        self.grad_clip = max_norm;
        self
    }

    pub fn from_state<S: Scalar>(params: &[Tensor<S>], lr: f64, state: AdamState) -> Result<Self> {
        let fits = |buf: &[Vec<f64>]| {
            buf.len() == params.len() && buf.iter().zip(params).all(|(b, p)| b.len() == p.numel())
        };
        if !fits(&state.m) || !fits(&state.v) {
            return Err(Error::format("optimizer state", "moment buffers do not match the model"));
        }
        Ok(Adam { lr, grad_clip: None, state })
    }

    pub fn state(&self) -> &AdamState {
        &self.state
    }

    pub fn steps_taken(&self) -> u64 {
        self.state.step
    }

    /// Global L2 norm over every parameter gradient.
    pub fn grad_norm<S: Scalar>(params: &[Tensor<S>]) -> f64 {
        params
            .iter()
            .filter_map(|p| p.grad())
            .flat_map(|g| g.into_iter().map(|v| v.to_f64_lossy().powi(2)))
            .sum::<f64>()
            .sqrt()
    }

    /// One update. Parameters without a gradient are left untouched.
    /// Returns the gradient norm before clipping.
    pub fn step<S: Scalar>(&mut self, params: &[Tensor<S>]) -> Result<f64> {
        if params.len() != self.state.m.len() {
            return Err(Error::invalid(format!(
                "optimizer tracks {} parameters, got {}",
                self.state.m.len(),
                params.len()
            )));
        }
        let norm = Self::grad_norm(params);
        let scale = match self.grad_clip {
            Some(max) if norm > max => max / (norm + 1e-6),
            _ => 1.0,
        };
        self.state.step += 1;
        let t = self.state.step as i32;
        let c1 = 1.0 - BETA1.powi(t);
        let c2 = 1.0 - BETA2.powi(t);
        for ((p, m), v) in params.iter().zip(&mut self.state.m).zip(&mut self.state.v) {
            let Some(grad) = p.grad() else { continue };
            let mut data = p.data_mut();
            for i in 0..data.len() {
                let g = grad[i].to_f64_lossy() * scale;
                m[i] = BETA1 * m[i] + (1.0 - BETA1) * g;
                v[i] = BETA2 * v[i] + (1.0 - BETA2) * g * g;
                let update = self.lr * (m[i] / c1) / ((v[i] / c2).sqrt() + EPSILON);
                data[i] = S::of(data[i].to_f64_lossy() - update);
            }
        }
        Ok(norm)
    }
}
