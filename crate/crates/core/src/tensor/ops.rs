//! Elementwise, broadcasting and reduction operators.

use super::{numel, Tensor};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Result shape of broadcasting `a` against `b` with trailing alignment.
pub(crate) fn broadcast_shape(a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let da = if i < rank - a.len() { 1 } else { a[i - (rank - a.len())] };
        let db = if i < rank - b.len() { 1 } else { b[i - (rank - b.len())] };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => {
                return Err(Error::Broadcast {
                    lhs: a.to_vec(),
                    rhs: b.to_vec(),
                })
            }
        };
    }
    Ok(out)
}

/// Strides of `shape` laid against `out`, zero on broadcast axes.
fn broadcast_strides(shape: &[usize], out: &[usize]) -> Vec<usize> {
    let offset = out.len() - shape.len();
    let mut strides = vec![0; out.len()];
    let mut acc = 1;
    for i in (0..shape.len()).rev() {
        if shape[i] != 1 || out[i + offset] == 1 {
            strides[i + offset] = acc;
        }
        acc *= shape[i];
    }
    strides
}

/// Calls `f(out_index, a_index, b_index)` for every output element.
fn for_each_broadcast(
    out: &[usize],
    a_strides: &[usize],
    b_strides: &[usize],
    mut f: impl FnMut(usize, usize, usize),
) {
    let total = numel(out);
    if total == 0 {
        return;
    }
    let rank = out.len();
    let mut idx = vec![0usize; rank];
    let (mut ai, mut bi) = (0usize, 0usize);
    for o in 0..total {
        f(o, ai, bi);
        for d in (0..rank).rev() {
            idx[d] += 1;
            ai += a_strides[d];
            bi += b_strides[d];
            if idx[d] < out[d] {
                break;
            }
            ai -= a_strides[d] * out[d];
            bi -= b_strides[d] * out[d];
            idx[d] = 0;
        }
    }
}

#[derive(Clone, Copy)]
enum BinaryKind {
    Add,
    Sub,
    Mul,
}

impl<S: Scalar> Tensor<S> {
    fn binary(&self, other: &Tensor<S>, kind: BinaryKind) -> Result<Tensor<S>> {
        let apply = move |a: S, b: S| match kind {
            BinaryKind::Add => a + b,
            BinaryKind::Sub => a - b,
            BinaryKind::Mul => a * b,
        };

        let (a_shape, b_shape) = (self.shape().to_vec(), other.shape().to_vec());
        let same = a_shape == b_shape;
        let out_shape = if same {
            a_shape.clone()
        } else {
            broadcast_shape(&a_shape, &b_shape)?
        };
        let a_strides = broadcast_strides(&a_shape, &out_shape);
        let b_strides = broadcast_strides(&b_shape, &out_shape);

        let data = {
            let (a, b) = (self.data(), other.data());
            if same {
                a.iter().zip(b.iter()).map(|(&x, &y)| apply(x, y)).collect()
            } else {
                let mut out = vec![S::zero(); numel(&out_shape)];
                for_each_broadcast(&out_shape, &a_strides, &b_strides, |o, i, j| {
                    out[o] = apply(a[i], b[j]);
                });
                out
            }
        };

        let (lhs, rhs) = (self.clone(), other.clone());
        let grad_shape = out_shape.clone();
        Ok(Tensor::from_op(out_shape, data, vec![self.clone(), other.clone()], move |g| {
            let need_a = lhs.requires_grad();
            let need_b = rhs.requires_grad();
            let mut ga = need_a.then(|| vec![S::zero(); lhs.numel()]);
            let mut gb = need_b.then(|| vec![S::zero(); rhs.numel()]);
            let (a, b) = (lhs.data(), rhs.data());
            for_each_broadcast(&grad_shape, &a_strides, &b_strides, |o, i, j| {
                let (da, db) = match kind {
                    BinaryKind::Add => (g[o], g[o]),
                    BinaryKind::Sub => (g[o], -g[o]),
                    BinaryKind::Mul => (g[o] * b[j], g[o] * a[i]),
                };
                if let Some(ga) = ga.as_mut() {
                    ga[i] += da;
                }
                if let Some(gb) = gb.as_mut() {
                    gb[j] += db;
                }
            });
            vec![ga, gb]
        }))
    }

    pub fn add(&self, other: &Tensor<S>) -> Result<Tensor<S>> {
        self.binary(other, BinaryKind::Add)
    }

    pub fn sub(&self, other: &Tensor<S>) -> Result<Tensor<S>> {
        self.binary(other, BinaryKind::Sub)
    }

    pub fn mul(&self, other: &Tensor<S>) -> Result<Tensor<S>> {
        self.binary(other, BinaryKind::Mul)
    }

    fn unary(
        &self,
        forward: impl Fn(S) -> S,
        derivative: impl Fn(S, S) -> S + Send + Sync + 'static,
    ) -> Tensor<S> {
        let data: Vec<S> = self.data().iter().map(|&x| forward(x)).collect();
        let input = self.clone();
        Tensor::from_op(self.shape().to_vec(), data, vec![self.clone()], move |g| {
            let x = input.data();
            vec![Some(x.iter().zip(g).map(|(&x, &g)| derivative(x, g)).collect())]
        })
    }

    pub fn mul_scalar(&self, k: S) -> Tensor<S> {
        self.unary(move |x| x * k, move |_, g| g * k)
    }

    pub fn add_scalar(&self, k: S) -> Tensor<S> {
        self.unary(move |x| x + k, |_, g| g)
    }

    pub fn neg(&self) -> Tensor<S> {
        self.mul_scalar(-S::one())
    }

    pub fn relu(&self) -> Tensor<S> {
        self.unary(
            |x| if x > S::zero() { x } else { S::zero() },
            |x, g| if x > S::zero() { g } else { S::zero() },
        )
    }

    pub fn square(&self) -> Tensor<S> {
        self.unary(|x| x * x, |x, g| (x + x) * g)
    }

    pub fn exp(&self) -> Tensor<S> {
        self.unary(|x| x.exp(), |x, g| x.exp() * g)
    }

    /// Clamps into `[lo, hi]`; the gradient passes only strictly inside.
    pub fn clamp(&self, lo: S, hi: S) -> Tensor<S> {
        self.unary(
            move |x| x.max(lo).min(hi),
            move |x, g| if x > lo && x < hi { g } else { S::zero() },
        )
    }

    pub fn sum(&self) -> Tensor<S> {
        let total = self.data().iter().copied().sum();
        let n = self.numel();
        Tensor::from_op(Vec::new(), vec![total], vec![self.clone()], move |g| {
            vec![Some(vec![g[0]; n])]
        })
    }

    pub fn mean(&self) -> Tensor<S> {
        let n = self.numel();
        let k = if n == 0 { S::zero() } else { S::one() / S::of(n as f64) };
        self.sum().mul_scalar(k)
    }

    /// Mean squared error over all elements.
    pub fn mse(&self, target: &Tensor<S>) -> Result<Tensor<S>> {
        if self.shape() != target.shape() {
            return Err(Error::ShapeMismatch {
                op: "mse",
                lhs: self.shape().to_vec(),
                rhs: target.shape().to_vec(),
            });
        }
        Ok(self.sub(target)?.square().mean())
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor<S>> {
        if numel(shape) != self.numel() {
            return Err(Error::ShapeMismatch {
                op: "reshape",
                lhs: self.shape().to_vec(),
                rhs: shape.to_vec(),
            });
        }
        Ok(Tensor::from_op(
            shape.to_vec(),
            self.to_vec(),
            vec![self.clone()],
            |g| vec![Some(g.to_vec())],
        ))
    }

    /// Elementwise map producing a constant (no gradient).
    pub fn map(&self, f: impl Fn(S) -> S) -> Tensor<S> {
        let data = self.data().iter().map(|&x| f(x)).collect();
        Tensor::make(self.shape().to_vec(), data, false, None)
    }

    /// Rows `[start, end)` along the leading axis, as a constant.
    pub fn slice_rows(&self, start: usize, end: usize) -> Result<Tensor<S>> {
        let lead = *self.shape().first().unwrap_or(&0);
        if start > end || end > lead {
            return Err(Error::IndexOutOfRange { index: end, len: lead });
        }
        let row = if lead == 0 { 0 } else { self.numel() / lead };
        let mut shape = self.shape().to_vec();
        shape[0] = end - start;
        Tensor::new(&shape, self.data()[start * row..end * row].to_vec())
    }

    /// Concatenates constants along the leading axis.
    pub fn cat_rows(parts: &[Tensor<S>]) -> Result<Tensor<S>> {
        let first = parts
            .first()
            .ok_or_else(|| Error::invalid("cat_rows of zero tensors"))?;
        let tail = &first.shape()[1..];
        let mut rows = 0;
        let mut data = Vec::new();
        for p in parts {
            if p.rank() == 0 || &p.shape()[1..] != tail {
                return Err(Error::ShapeMismatch {
                    op: "cat_rows",
                    lhs: first.shape().to_vec(),
                    rhs: p.shape().to_vec(),
                });
            }
            rows += p.shape()[0];
            data.extend_from_slice(&p.data());
        }
        let mut shape = first.shape().to_vec();
        shape[0] = rows;
        Tensor::new(&shape, data)
    }
}
