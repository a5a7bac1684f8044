//! Dense row-major tensors with reverse-mode differentiation.
//!
//! Every operation that produces a tensor from inputs that require gradients
//! records a backward rule on the output node. [`Tensor::backward`] walks the
//! recorded graph once in reverse topological order and returns a
//! [`Gradients`] table keyed by node identity, so the same (immutable) weights
//! can be shared across threads running independent computations.

pub mod counters;
mod elementwise;
pub mod gradcheck;
pub mod init;
pub mod io;
mod layout;
mod linalg;
mod nn;

use std::cell::Cell;
use std::collections::HashMap;
use std::fmt;
use std::ops::{AddAssign, MulAssign, SubAssign};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use num_traits::{Float, FromPrimitive};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use layout::NO_SOURCE;
pub use nn::conv_out_extent;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DType {
    F32,
    F64,
}

impl DType {
    pub fn size(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::F64 => 8,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            DType::F32 => "f32",
            DType::F64 => "f64",
        }
    }
}

impl fmt::Display for DType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Scalar types a [`Tensor`] can hold.
pub trait Element:
    Float
    + FromPrimitive
    + AddAssign
    + SubAssign
    + MulAssign
    + Default
    + fmt::Debug
    + fmt::Display
    + Send
    + Sync
    + 'static
{
    const DTYPE: DType;

    fn erf(self) -> Self;

    fn of_f64(v: f64) -> Self {
        <Self as FromPrimitive>::from_f64(v).expect("finite conversion")
    }

    fn as_f64(self) -> f64;

    fn write_le(self, out: &mut Vec<u8>);
}

impl Element for f32 {
    const DTYPE: DType = DType::F32;

    fn erf(self) -> Self {
        libm::erff(self)
    }

    fn as_f64(self) -> f64 {
        self as f64
    }

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
}

impl Element for f64 {
    const DTYPE: DType = DType::F64;

    fn erf(self) -> Self {
        libm::erf(self)
    }

    fn as_f64(self) -> f64 {
        self
    }

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
}

#[inline]
pub(crate) fn cst<T: Element>(v: f64) -> T {
    <T as Element>::of_f64(v)
}

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
    let prev = GRAD_ENABLED.with(|g| g.replace(false));
    let _restore = Restore(prev);
    f()
}

pub fn grad_enabled() -> bool {
    GRAD_ENABLED.with(|g| g.get())
}

static NEXT_ID: AtomicU64 = AtomicU64::new(1);

pub(crate) struct BackwardCtx<'a, T> {
    pub out: &'a [T],
    pub grad: &'a [T],
    /// Which parents need a gradient.
    pub needs: &'a [bool],
}

type BackwardFn<T> = dyn Fn(&BackwardCtx<'_, T>) -> Vec<Option<Vec<T>>> + Send + Sync;

struct GradFn<T: Element> {
    name: &'static str,
    parents: Vec<Tensor<T>>,
    backward: Box<BackwardFn<T>>,
}

struct Node<T: Element> {
    id: u64,
    shape: Vec<usize>,
    data: Vec<T>,
    requires_grad: bool,
    grad_fn: Option<GradFn<T>>,
}

/// An immutable N-dimensional array, optionally part of a recorded computation.
pub struct Tensor<T: Element> {
    node: Arc<Node<T>>,
}

impl<T: Element> Clone for Tensor<T> {
    fn clone(&self) -> Self {
        Tensor {
            node: Arc::clone(&self.node),
        }
    }
}

impl<T: Element> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut s = f.debug_struct("Tensor");
        s.field("shape", &self.node.shape)
            .field("dtype", &T::DTYPE)
            .field("requires_grad", &self.node.requires_grad);
        if let Some(g) = &self.node.grad_fn {
            s.field("op", &g.name);
        }
        if self.numel() <= 16 {
            s.field("data", &self.node.data);
        }
        s.finish()
    }
}

pub(crate) fn numel_of(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl<T: Element> Tensor<T> {
    fn from_node(shape: Vec<usize>, data: Vec<T>, requires_grad: bool, grad_fn: Option<GradFn<T>>) -> Self {
        debug_assert_eq!(numel_of(&shape), data.len());
        Tensor {
            node: Arc::new(Node {
                id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
                shape,
                data,
                requires_grad,
                grad_fn,
            }),
        }
    }

    /// Creates a leaf tensor.
    pub fn new(shape: &[usize], data: Vec<T>) -> Result<Self> {
        if shape.contains(&0) {
            return Err(Error::dim("new", format!("zero extent in shape {shape:?}")));
        }
        if numel_of(shape) != data.len() {
            return Err(Error::dim(
                "new",
                format!("shape {shape:?} needs {} values, got {}", numel_of(shape), data.len()),
            ));
        }
        Ok(Self::from_node(shape.to_vec(), data, false, None))
    }

    pub fn from_f64(shape: &[usize], data: &[f64]) -> Result<Self> {
        Self::new(shape, data.iter().map(|&v| cst(v)).collect())
    }

    pub fn scalar(v: T) -> Self {
        Self::from_node(Vec::new(), vec![v], false, None)
    }

    pub fn full(shape: &[usize], v: T) -> Self {
        Self::from_node(shape.to_vec(), vec![v; numel_of(shape)], false, None)
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, T::one())
    }

    pub fn eye(n: usize) -> Self {
        let mut data = vec![T::zero(); n * n];
        for i in 0..n {
            data[i * n + i] = T::one();
        }
        Self::from_node(vec![n, n], data, false, None)
    }

    /// Returns a leaf copy of this tensor that records gradients.
    pub fn requires_grad(self) -> Self {
        self.with_requires_grad(true)
    }

    pub fn with_requires_grad(&self, requires_grad: bool) -> Self {
        Self::from_node(self.shape().to_vec(), self.node.data.clone(), requires_grad, None)
    }

    /// A leaf copy that is cut out of the recorded graph.
    pub fn detach(&self) -> Self {
        Self::from_node(self.shape().to_vec(), self.node.data.clone(), false, None)
    }

    pub fn id(&self) -> u64 {
        self.node.id
    }

    pub fn shape(&self) -> &[usize] {
        &self.node.shape
    }

    pub fn rank(&self) -> usize {
        self.node.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.node.data.len()
    }

    pub fn data(&self) -> &[T] {
        &self.node.data
    }

    pub fn to_vec(&self) -> Vec<T> {
        self.node.data.clone()
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.node.data.iter().map(|v| v.as_f64()).collect()
    }

    pub fn dtype(&self) -> DType {
        T::DTYPE
    }

    pub fn is_tracked(&self) -> bool {
        self.node.requires_grad
    }

    pub fn is_leaf(&self) -> bool {
        self.node.grad_fn.is_none()
    }

    pub fn op_name(&self) -> Option<&'static str> {
        self.node.grad_fn.as_ref().map(|g| g.name)
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> T {
        assert_eq!(self.numel(), 1, "item() on tensor of shape {:?}", self.shape());
        self.node.data[0]
    }

    pub fn dim(&self, axis: usize) -> usize {
        self.node.shape[axis]
    }

    /// Converts between element types. The result is a leaf.
    pub fn cast<U: Element>(&self) -> Tensor<U> {
        Tensor::from_node(
            self.shape().to_vec(),
            self.node.data.iter().map(|v| cst::<U>(v.as_f64())).collect(),
            self.node.requires_grad,
            None,
        )
    }

    /// Builds the output of a recorded operation. When gradients are disabled
    /// or no parent is tracked the backward rule is dropped.
    pub(crate) fn from_op<F>(name: &'static str, shape: Vec<usize>, data: Vec<T>, parents: Vec<Tensor<T>>, backward: F) -> Self
    where
        F: Fn(&BackwardCtx<'_, T>) -> Vec<Option<Vec<T>>> + Send + Sync + 'static,
    {
        let tracked = grad_enabled() && parents.iter().any(|p| p.node.requires_grad);
        if tracked {
            Self::from_node(
                shape,
                data,
                true,
                Some(GradFn {
                    name,
                    parents,
                    backward: Box::new(backward),
                }),
            )
        } else {
            Self::from_node(shape, data, false, None)
        }
    }

    /// Reverse-mode pass from a one-element tensor.
    pub fn backward(&self) -> Result<Gradients<T>> {
        if self.numel() != 1 {
            return Err(Error::dim("backward", format!("root must be scalar, got shape {:?}", self.shape())));
        }
        self.backward_with(vec![T::one()])
    }

    /// Reverse-mode pass seeded with an explicit upstream gradient.
    pub fn backward_with(&self, seed: Vec<T>) -> Result<Gradients<T>> {
        if seed.len() != self.numel() {
            return Err(Error::dim("backward", "seed length does not match root"));
        }
        let mut grads: HashMap<u64, Vec<T>> = HashMap::new();
        if !self.node.requires_grad {
            return Ok(Gradients { grads });
        }
        let order = self.topo_order();
        grads.insert(self.id(), seed);
        for node in order.iter().rev() {
            let Some(grad_fn) = &node.grad_fn else { continue };
            let Some(g) = grads.get(&node.id) else { continue };
            let needs: Vec<bool> = grad_fn.parents.iter().map(|p| p.node.requires_grad).collect();
            let ctx = BackwardCtx {
                out: &node.data,
                grad: g,
                needs: &needs,
            };
            let parent_grads = (grad_fn.backward)(&ctx);
            debug_assert_eq!(parent_grads.len(), grad_fn.parents.len(), "{}", grad_fn.name);
            for (parent, pg) in grad_fn.parents.iter().zip(parent_grads) {
                let Some(pg) = pg else { continue };
                if !parent.node.requires_grad {
                    continue;
                }
                debug_assert_eq!(pg.len(), parent.numel(), "{}", grad_fn.name);
                match grads.get_mut(&parent.node.id) {
                    Some(acc) => acc.iter_mut().zip(&pg).for_each(|(a, b)| *a += *b),
                    None => {
                        grads.insert(parent.node.id, pg);
                    }
                }
            }
        }
        Ok(Gradients { grads })
    }

    /// Post-order over tracked nodes; each node appears once.
    fn topo_order(&self) -> Vec<Arc<Node<T>>> {
        let mut order = Vec::new();
        let mut visited = std::collections::HashSet::new();
        let mut stack: Vec<(Arc<Node<T>>, bool)> = vec![(Arc::clone(&self.node), false)];
        while let Some((node, expanded)) = stack.pop() {
            if expanded {
                order.push(node);
                continue;
            }
            if !visited.insert(node.id) {
                continue;
            }
            stack.push((Arc::clone(&node), true));
            if let Some(g) = &node.grad_fn {
                for p in &g.parents {
                    if p.node.requires_grad && !visited.contains(&p.node.id) {
                        stack.push((Arc::clone(&p.node), false));
                    }
                }
            }
        }
        order
    }
}

/// Gradients produced by one backward pass, keyed by tensor identity.
#[derive(Debug, Clone)]
pub struct Gradients<T> {
    grads: HashMap<u64, Vec<T>>,
}

impl<T: Element> Gradients<T> {
    pub fn get(&self, t: &Tensor<T>) -> Option<&[T]> {
        self.grads.get(&t.id()).map(|v| v.as_slice())
    }

    /// Gradient as a tensor of the same shape; zeros when `t` was unreachable.
    pub fn get_tensor(&self, t: &Tensor<T>) -> Tensor<T> {
        match self.get(t) {
            Some(g) => Tensor::from_node(t.shape().to_vec(), g.to_vec(), false, None),
            None => Tensor::zeros(t.shape()),
        }
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }
}

impl<T: Element> From<T> for Tensor<T> {
    fn from(v: T) -> Self {
        Tensor::scalar(v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_shapes() {
        assert!(Tensor::<f32>::new(&[2, 0], vec![]).is_err());
        assert!(Tensor::<f32>::new(&[2, 2], vec![1.0; 3]).is_err());
        assert_eq!(Tensor::<f32>::new(&[2, 3], vec![0.0; 6]).unwrap().numel(), 6);
    }

    #[test]
    fn backward_reaches_every_tracked_tensor() {
        let x = Tensor::<f64>::from_f64(&[3], &[1.0, 2.0, 3.0]).unwrap().requires_grad();
        let y = x.mul(&x).unwrap();
        let z = y.add(&x).unwrap().sum();
        let g = z.backward().unwrap();
        assert_eq!(g.get(&x).unwrap(), &[3.0, 5.0, 7.0]);
        assert_eq!(g.get(&y).unwrap(), &[1.0, 1.0, 1.0]);
        assert_eq!(g.get(&y).unwrap().len(), y.numel());
    }

    #[test]
    fn shared_subexpression_is_visited_once() {
        let x = Tensor::<f64>::scalar(2.0).requires_grad();
        let y = x.mul(&x).unwrap();
        // y feeds two consumers; its rule must run once with the summed grad
        let z = y.add(&y).unwrap();
        let g = z.backward().unwrap();
        assert_eq!(g.get(&x).unwrap(), &[8.0]);
    }

    #[test]
    fn no_grad_drops_records() {
        let x = Tensor::<f32>::scalar(1.0).requires_grad();
        let y = no_grad(|| x.exp());
        assert!(!y.is_tracked());
        assert!(grad_enabled());
        assert!(x.exp().is_tracked());
    }
}
