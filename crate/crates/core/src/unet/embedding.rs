use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const MAX_PERIOD: f64 = 10000.0;

/// `freqs[j] = exp(−ln(10000)·j/(dim/2))` for `j < dim/2`.
pub fn timestep_frequencies(dim: usize) -> Vec<f64> {
    let half = dim / 2;
    (0..half)
        .map(|j| (-MAX_PERIOD.ln() * j as f64 / half as f64).exp())
        .collect()
}

/// Sinusoidal timestep features `(B, dim)`: the cosine half comes first,
/// then the sine half.
pub fn timestep_embedding<S: Scalar>(t: &[usize], dim: usize) -> Result<Tensor<S>> {
    if dim % 2 != 0 {
        return Err(Error::invalid(format!("embedding dimension must be even, got {dim}")));
    }
    let freqs = timestep_frequencies(dim);
    let mut data = Vec::with_capacity(t.len() * dim);
    for &step in t {
        let args: Vec<f64> = freqs.iter().map(|f| step as f64 * f).collect();
        data.extend(args.iter().map(|a| S::of(a.cos())));
        data.extend(args.iter().map(|a| S::of(a.sin())));
    }
    Tensor::new(&[t.len(), dim], data)
}
