//! Seedable, portable random source.
//!
//! Backed by ChaCha8, whose output is specified bit-for-bit, so a seed
//! reproduces the same draws on every platform. Independent purposes
//! (initialization, timesteps, noise, ...) use separate ChaCha streams of
//! the same seed, and a stream's position can be captured and restored.

use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::scalar::Scalar;
use crate::tensor::{numel, Tensor};

#[derive(Clone, Debug)]
pub struct Rng {
    inner: ChaCha8Rng,
}

/// Serializable generator position.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    pub word_pos: u128,
}

impl Rng {
    pub fn seed_from_u64(seed: u64) -> Self {
        Self::with_stream(seed, 0)
    }

    pub fn with_stream(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        Rng { inner }
    }

    pub fn state(&self) -> RngState {
        RngState {
            seed: self.inner.get_seed(),
            stream: self.inner.get_stream(),
            word_pos: self.inner.get_word_pos(),
        }
    }

    pub fn from_state(state: RngState) -> Self {
        let mut inner = ChaCha8Rng::from_seed(state.seed);
        inner.set_stream(state.stream);
        inner.set_word_pos(state.word_pos);
        Rng { inner }
    }

    pub fn standard_normal(&mut self) -> f64 {
        self.inner.sample(StandardNormal)
    }

    /// Uniform in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    /// Uniform in `[lo, hi)`.
    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Uniform integer in `[0, n)`. `n` must be positive.
    pub fn index(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n as u64) as usize
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.uniform() < p
    }

    /// Fisher–Yates permutation of `0..n`.
    pub fn permutation(&mut self, n: usize) -> Vec<usize> {
        let mut order: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            let j = self.index(i + 1);
            order.swap(i, j);
        }
        order
    }
}

/// Tensor of i.i.d. standard-normal entries.
pub fn randn<S: Scalar>(rng: &mut Rng, shape: &[usize]) -> Tensor<S> {
    let data = (0..numel(shape)).map(|_| S::of(rng.standard_normal())).collect();
    Tensor::new(shape, data).expect("length matches shape")
}

/// Tensor of i.i.d. entries uniform in `[lo, hi)`.
pub fn rand_uniform<S: Scalar>(rng: &mut Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<S> {
    let data = (0..numel(shape)).map(|_| S::of(rng.uniform_range(lo, hi))).collect();
    Tensor::new(shape, data).expect("length matches shape")
}
