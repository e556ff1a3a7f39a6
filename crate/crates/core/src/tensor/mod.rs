//! Dense N-dimensional arrays with a dynamic reverse-mode gradient tape.
//!
//! A [`Tensor`] is a cheap, shared handle. Operations on tensors that
//! require gradients record a backward closure together with their inputs;
//! [`Tensor::backward`] walks that graph in reverse topological order and
//! accumulates gradients into the leaves. Recording can be suspended for a
//! scope with [`no_grad`].

mod nn;
mod ops;

use std::cell::Cell;
use std::collections::HashMap;
use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock, RwLockReadGuard, RwLockWriteGuard};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

static NEXT_ID: AtomicU64 = AtomicU64::new(0);

thread_local! {
    static GRAD_ENABLED: Cell<bool> = const { Cell::new(true) };
}

/// Runs `f` with gradient recording disabled on the current thread.
pub fn no_grad<R>(f: impl FnOnce() -> R) -> R {
    struct Restore(bool);
    impl Drop for Restore {
        fn drop(&mut self) {
            GRAD_ENABLED.with(|g| g.set(self.0));
        }
    }
    let _restore = Restore(GRAD_ENABLED.with(|g| g.replace(false)));
    f()
}

pub fn is_grad_enabled() -> bool {
    GRAD_ENABLED.with(|g| g.get())
}

/// Maps the upstream gradient of a node to one optional gradient per parent.
type BackwardFn<S> = Box<dyn Fn(&[S]) -> Vec<Option<Vec<S>>> + Send + Sync>;

struct Op<S> {
    parents: Vec<Tensor<S>>,
    backward: BackwardFn<S>,
}

struct Node<S> {
    id: u64,
    shape: Vec<usize>,
    data: RwLock<Vec<S>>,
    grad: Mutex<Option<Vec<S>>>,
    requires_grad: bool,
    op: Option<Op<S>>,
}

pub struct Tensor<S>(Arc<Node<S>>);

impl<S> Clone for Tensor<S> {
    fn clone(&self) -> Self {
        Tensor(Arc::clone(&self.0))
    }
}

pub(crate) fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl<S: Scalar> Tensor<S> {
    fn make(shape: Vec<usize>, data: Vec<S>, requires_grad: bool, op: Option<Op<S>>) -> Self {
        debug_assert_eq!(numel(&shape), data.len());
        Tensor(Arc::new(Node {
            id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
            shape,
            data: RwLock::new(data),
            grad: Mutex::new(None),
            requires_grad,
            op,
        }))
    }

    /// Constant tensor; fails if `data` does not fill `shape`.
    pub fn new(shape: &[usize], data: Vec<S>) -> Result<Self> {
        if numel(shape) != data.len() {
            return Err(Error::invalid(format!(
                "shape {shape:?} needs {} elements, got {}",
                numel(shape),
                data.len()
            )));
        }
        Ok(Self::make(shape.to_vec(), data, false, None))
    }

    /// Leaf that accumulates gradients during [`Tensor::backward`].
    pub fn parameter(shape: &[usize], data: Vec<S>) -> Result<Self> {
        let t = Self::new(shape, data)?;
        Ok(Self::make(t.shape().to_vec(), t.to_vec(), true, None))
    }

    pub fn from_f64(shape: &[usize], data: &[f64]) -> Result<Self> {
        Self::new(shape, data.iter().map(|&v| S::of(v)).collect())
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, S::zero())
    }

    pub fn full(shape: &[usize], value: S) -> Self {
        Self::make(shape.to_vec(), vec![value; numel(shape)], false, None)
    }

    pub fn scalar(value: S) -> Self {
        Self::make(Vec::new(), vec![value], false, None)
    }

    /// Builds an op result, recording `backward` only when some parent needs
    /// gradients and recording is enabled.
    pub(crate) fn from_op(
        shape: Vec<usize>,
        data: Vec<S>,
        parents: Vec<Tensor<S>>,
        backward: impl Fn(&[S]) -> Vec<Option<Vec<S>>> + Send + Sync + 'static,
    ) -> Self {
        let track = is_grad_enabled() && parents.iter().any(|p| p.requires_grad());
        if track {
            let op = Op {
                parents,
                backward: Box::new(backward),
            };
            Self::make(shape, data, true, Some(op))
        } else {
            Self::make(shape, data, false, None)
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.0.shape
    }

    pub fn rank(&self) -> usize {
        self.0.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.0.data.read().unwrap().len()
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    pub fn is_leaf(&self) -> bool {
        self.0.op.is_none()
    }

    pub fn data(&self) -> RwLockReadGuard<'_, Vec<S>> {
        self.0.data.read().unwrap()
    }

    /// Mutable access to the buffer, intended for optimizer updates and
    /// initialization of leaves. Mutating a tensor that a live graph still
    /// references invalidates that graph's gradients.
    pub fn data_mut(&self) -> RwLockWriteGuard<'_, Vec<S>> {
        self.0.data.write().unwrap()
    }

    pub fn to_vec(&self) -> Vec<S> {
        self.data().clone()
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.data().iter().map(|v| v.to_f64_lossy()).collect()
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> S {
        let d = self.data();
        assert_eq!(d.len(), 1, "item() on tensor of shape {:?}", self.shape());
        d[0]
    }

    pub fn grad(&self) -> Option<Vec<S>> {
        self.0.grad.lock().unwrap().clone()
    }

    pub fn zero_grad(&self) {
        *self.0.grad.lock().unwrap() = None;
    }

    /// Scales the stored gradient in place, if any.
    pub fn scale_grad(&self, factor: S) {
        if let Some(g) = self.0.grad.lock().unwrap().as_mut() {
            g.iter_mut().for_each(|v| *v *= factor);
        }
    }

    /// A constant copy cut off from the tape.
    pub fn detach(&self) -> Self {
        Self::make(self.shape().to_vec(), self.to_vec(), false, None)
    }

    /// Casts to another precision as a constant.
    pub fn cast<T: Scalar>(&self) -> Tensor<T> {
        let data = self.data().iter().map(|v| T::of(v.to_f64_lossy())).collect();
        Tensor::make(self.shape().to_vec(), data, false, None)
    }

    fn accumulate_grad(&self, g: &[S]) {
        let mut slot = self.0.grad.lock().unwrap();
        match slot.as_mut() {
            Some(acc) => acc.iter_mut().zip(g).for_each(|(a, &b)| *a += b),
            None => *slot = Some(g.to_vec()),
        }
    }

    /// Reverse-mode sweep from a scalar loss. Every leaf that requires
    /// gradients has the result added to its stored gradient, so calling
    /// this twice without [`Tensor::zero_grad`] accumulates.
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(Error::invalid(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape()
            )));
        }
        if !self.requires_grad() {
            return Ok(());
        }

        let order = self.topological_order();
        let mut pending: HashMap<u64, Vec<S>> = HashMap::new();
        pending.insert(self.0.id, vec![S::one()]);

        for node in order.iter().rev() {
            let Some(upstream) = pending.remove(&node.0.id) else {
                continue;
            };
            let Some(op) = &node.0.op else {
                node.accumulate_grad(&upstream);
                continue;
            };
            let grads = (op.backward)(&upstream);
            debug_assert_eq!(grads.len(), op.parents.len());
            for (parent, grad) in op.parents.iter().zip(grads) {
                let Some(grad) = grad else { continue };
                if !parent.requires_grad() {
                    continue;
                }
                debug_assert_eq!(grad.len(), parent.numel());
                match pending.get_mut(&parent.0.id) {
                    Some(acc) => acc.iter_mut().zip(&grad).for_each(|(a, &b)| *a += b),
                    None => {
                        pending.insert(parent.0.id, grad);
                    }
                }
            }
        }
        Ok(())
    }

    /// Post-order over the gradient-carrying subgraph (parents before children).
    fn topological_order(&self) -> Vec<Tensor<S>> {
        let mut order = Vec::new();
        let mut visited = std::collections::HashSet::new();
        let mut stack: Vec<(Tensor<S>, bool)> = vec![(self.clone(), false)];
        while let Some((node, expanded)) = stack.pop() {
            if expanded {
                order.push(node);
                continue;
            }
            if !visited.insert(node.0.id) {
                continue;
            }
            stack.push((node.clone(), true));
            if let Some(op) = &node.0.op {
                for p in &op.parents {
                    if p.requires_grad() && !visited.contains(&p.0.id) {
                        stack.push((p.clone(), false));
                    }
                }
            }
        }
        order
    }
}

impl<S: Scalar> fmt::Debug for Tensor<S> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let data = self.data();
        let preview: Vec<_> = data.iter().take(8).collect();
        f.debug_struct("Tensor")
            .field("shape", &self.shape())
            .field("requires_grad", &self.requires_grad())
            .field("data", &preview)
            .finish()
    }
}
