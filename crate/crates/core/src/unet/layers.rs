use crate::error::Result;
use crate::rng::{rand_uniform, randn, Rng};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const GROUPS: usize = 32;
pub const NORM_EPS: f64 = 1e-5;

/// Parameter initialization source. `Zeros` builds a network whose values
/// are about to be overwritten (casts, checkpoint loads).
pub enum Init<'a> {
    Random(&'a mut Rng),
    Zeros,
}

impl Init<'_> {
    /// Centered uniform with bound `1/√fan_in`.
    fn fan_in<S: Scalar>(&mut self, shape: &[usize], fan_in: usize) -> Tensor<S> {
        let t = match self {
            Init::Random(rng) => {
                let bound = 1.0 / (fan_in as f64).sqrt();
                rand_uniform(rng, shape, -bound, bound)
            }
            Init::Zeros => Tensor::zeros(shape),
        };
        as_parameter(t)
    }

    fn normal<S: Scalar>(&mut self, shape: &[usize]) -> Tensor<S> {
        let t = match self {
            Init::Random(rng) => randn(rng, shape),
            Init::Zeros => Tensor::zeros(shape),
        };
        as_parameter(t)
    }
}

fn as_parameter<S: Scalar>(t: Tensor<S>) -> Tensor<S> {
    Tensor::parameter(t.shape(), t.to_vec()).expect("same shape")
}

pub(crate) type Named<S> = Vec<(String, Tensor<S>)>;

pub struct Conv2d<S> {
    pub weight: Tensor<S>,
    pub bias: Tensor<S>,
    stride: usize,
    padding: usize,
}

impl<S: Scalar> Conv2d<S> {
    pub fn new(init: &mut Init, in_ch: usize, out_ch: usize, kernel: usize, stride: usize) -> Self {
        let fan_in = in_ch * kernel * kernel;
        Conv2d {
            weight: init.fan_in(&[out_ch, in_ch, kernel, kernel], fan_in),
            bias: init.fan_in(&[out_ch], fan_in),
            stride,
            padding: (kernel - 1) / 2,
        }
    }

    pub fn forward(&self, x: &Tensor<S>) -> Result<Tensor<S>> {
        x.conv2d(&self.weight, Some(&self.bias), self.stride, self.padding)
    }

    pub(crate) fn collect(&self, prefix: &str, out: &mut Named<S>) {
        out.push((format!("{prefix}.w"), self.weight.clone()));
        out.push((format!("{prefix}.b"), self.bias.clone()));
    }
}

pub struct Linear<S> {
    pub weight: Tensor<S>,
    pub bias: Tensor<S>,
}

impl<S: Scalar> Linear<S> {
    pub fn new(init: &mut Init, fan_in: usize, fan_out: usize) -> Self {
        Linear {
            weight: init.fan_in(&[fan_out, fan_in], fan_in),
            bias: init.fan_in(&[fan_out], fan_in),
        }
    }

    pub fn forward(&self, x: &Tensor<S>) -> Result<Tensor<S>> {
        x.linear(&self.weight, Some(&self.bias))
    }

    pub(crate) fn collect(&self, prefix: &str, out: &mut Named<S>) {
        out.push((format!("{prefix}.w"), self.weight.clone()));
        out.push((format!("{prefix}.b"), self.bias.clone()));
    }
}

pub struct Embedding<S> {
    pub table: Tensor<S>,
}

impl<S: Scalar> Embedding<S> {
    pub fn new(init: &mut Init, rows: usize, dim: usize) -> Self {
        Embedding {
            table: init.normal(&[rows, dim]),
        }
    }

    pub fn forward(&self, indices: &[usize]) -> Result<Tensor<S>> {
        self.table.embedding(indices)
    }

    pub(crate) fn collect(&self, prefix: &str, out: &mut Named<S>) {
        out.push((format!("{prefix}.table"), self.table.clone()));
    }
}

/// `relu(group_norm(·))` with the fixed group count.
pub fn norm_relu<S: Scalar>(x: &Tensor<S>) -> Result<Tensor<S>> {
    Ok(x.group_norm(GROUPS, NORM_EPS)?.relu())
}

/// Two 3×3 conv → group-norm → relu stages plus a shortcut, which is a
/// learned 1×1 projection when the channel count changes.
pub struct ResidualBlock<S> {
    pub conv1: Conv2d<S>,
    pub conv2: Conv2d<S>,
    pub shortcut: Option<Conv2d<S>>,
}

impl<S: Scalar> ResidualBlock<S> {
    pub fn new(init: &mut Init, in_ch: usize, out_ch: usize) -> Self {
        ResidualBlock {
            conv1: Conv2d::new(init, in_ch, out_ch, 3, 1),
            conv2: Conv2d::new(init, out_ch, out_ch, 3, 1),
            shortcut: (in_ch != out_ch).then(|| Conv2d::new(init, in_ch, out_ch, 1, 1)),
        }
    }

    pub fn forward(&self, x: &Tensor<S>) -> Result<Tensor<S>> {
        let h = norm_relu(&self.conv1.forward(x)?)?;
        let h = norm_relu(&self.conv2.forward(&h)?)?;
        match &self.shortcut {
            Some(proj) => h.add(&proj.forward(x)?),
            None => h.add(x),
        }
    }

    pub(crate) fn collect(&self, prefix: &str, out: &mut Named<S>) {
        self.conv1.collect(&format!("{prefix}.conv1"), out);
        self.conv2.collect(&format!("{prefix}.conv2"), out);
        if let Some(s) = &self.shortcut {
            s.collect(&format!("{prefix}.shortcut"), out);
        }
    }
}
