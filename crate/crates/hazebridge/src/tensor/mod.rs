//! Dense tensors with reverse-mode gradients.
//!
//! Values are immutable once constructed; operations return new tensors and
//! record a graph node when any input participates in gradient tracking.
//! [`Tensor::backward`] walks that graph and returns per-leaf gradients.
//! The element type is generic so the same operations run in `f32` for
//! training and in `f64` for verification oracles.

mod kernels;
mod ops;

pub mod gradcheck;

pub use kernels::DiffKind;

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::rng::RngStream;

/// Scalar element type for tensors: `f32` for training, `f64` for oracles.
pub trait Element:
    Copy
    + Send
    + Sync
    + PartialOrd
    + fmt::Debug
    + fmt::Display
    + std::ops::Add<Output = Self>
    + std::ops::Sub<Output = Self>
    + std::ops::Mul<Output = Self>
    + std::ops::Div<Output = Self>
    + std::ops::Neg<Output = Self>
    + std::ops::AddAssign
    + std::ops::SubAssign
    + std::ops::MulAssign
    + 'static
{
    const DTYPE_CODE: u8;

    fn zero() -> Self;
    fn one() -> Self;
    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
    fn abs(self) -> Self;
    fn sqrt(self) -> Self;
    fn exp(self) -> Self;
    fn is_finite(self) -> bool;
    fn standard_normal(rng: &mut RngStream) -> Self;
}

impl Element for f32 {
    const DTYPE_CODE: u8 = 1;

    fn zero() -> Self {
        0.0
    }
    fn one() -> Self {
        1.0
    }
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn to_f64(self) -> f64 {
        self as f64
    }
    fn abs(self) -> Self {
        f32::abs(self)
    }
    fn sqrt(self) -> Self {
        f32::sqrt(self)
    }
    fn exp(self) -> Self {
        f32::exp(self)
    }
    fn is_finite(self) -> bool {
        f32::is_finite(self)
    }
    fn standard_normal(rng: &mut RngStream) -> Self {
        rng.normal()
    }
}

impl Element for f64 {
    const DTYPE_CODE: u8 = 2;

    fn zero() -> Self {
        0.0
    }
    fn one() -> Self {
        1.0
    }
    fn from_f64(v: f64) -> Self {
        v
    }
    fn to_f64(self) -> f64 {
        self
    }
    fn abs(self) -> Self {
        f64::abs(self)
    }
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
    fn exp(self) -> Self {
        f64::exp(self)
    }
    fn is_finite(self) -> bool {
        f64::is_finite(self)
    }
    fn standard_normal(rng: &mut RngStream) -> Self {
        rng.normal()
    }
}

static NEXT_ID: AtomicU64 = AtomicU64::new(1);

fn fresh_id() -> u64 {
    NEXT_ID.fetch_add(1, Ordering::Relaxed)
}

/// Backward hook: maps the output gradient to per-parent gradient
/// contributions (`None` for parents that do not need one).
type BackFn<E> = Box<dyn Fn(&[E]) -> Vec<Option<Vec<E>>> + Send + Sync>;

struct Node<E: Element> {
    parents: Vec<Tensor<E>>,
    backward: BackFn<E>,
}

struct Inner<E: Element> {
    id: u64,
    shape: Vec<usize>,
    data: Vec<E>,
    requires_grad: bool,
    node: Option<Node<E>>,
}

/// A dense n-dimensional array in row-major order.
pub struct Tensor<E: Element = f32> {
    inner: Arc<Inner<E>>,
}

impl<E: Element> Clone for Tensor<E> {
    fn clone(&self) -> Self {
        Tensor {
            inner: Arc::clone(&self.inner),
        }
    }
}

impl<E: Element> fmt::Debug for Tensor<E> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("id", &self.inner.id)
            .field("shape", &self.inner.shape)
            .field("requires_grad", &self.inner.requires_grad)
            .finish()
    }
}

fn check_shape(shape: &[usize], op: &'static str) -> Result<usize> {
    if shape.is_empty() {
        return Err(Error::InvalidShape {
            op,
            shape: shape.to_vec(),
            reason: "rank 0 not supported",
        });
    }
    let mut n = 1usize;
    for &e in shape {
        if e == 0 {
            return Err(Error::InvalidShape {
                op,
                shape: shape.to_vec(),
                reason: "zero extent",
            });
        }
        n = n.checked_mul(e).ok_or(Error::InvalidShape {
            op,
            shape: shape.to_vec(),
            reason: "element count overflow",
        })?;
    }
    Ok(n)
}

impl<E: Element> Tensor<E> {
    pub fn from_vec(shape: &[usize], data: Vec<E>) -> Result<Self> {
        let n = check_shape(shape, "from_vec")?;
        if n != data.len() {
            return Err(Error::InvalidShape {
                op: "from_vec",
                shape: shape.to_vec(),
                reason: "data length does not match shape",
            });
        }
        Ok(Self::leaf(shape.to_vec(), data, false))
    }

    pub fn zeros(shape: &[usize]) -> Result<Self> {
        let n = check_shape(shape, "zeros")?;
        Ok(Self::leaf(shape.to_vec(), vec![E::zero(); n], false))
    }

    pub fn full(shape: &[usize], value: E) -> Result<Self> {
        let n = check_shape(shape, "full")?;
        Ok(Self::leaf(shape.to_vec(), vec![value; n], false))
    }

    pub fn scalar(value: E) -> Self {
        Self::leaf(vec![1], vec![value], false)
    }

    /// I.i.d. standard normal entries, deterministic under the stream.
    pub fn gaussian(shape: &[usize], rng: &mut RngStream) -> Result<Self>
    where
        StandardNormal: Distribution<E>,
    {
        let n = check_shape(shape, "gaussian")?;
        let data = (0..n).map(|_| E::standard_normal(rng)).collect();
        Ok(Self::leaf(shape.to_vec(), data, false))
    }

    /// Mark this tensor as a differentiable leaf (a trainable parameter).
    pub fn with_grad(&self) -> Self {
        Self::leaf(self.inner.shape.clone(), self.inner.data.clone(), true)
    }

    /// A copy detached from the gradient graph.
    pub fn detach(&self) -> Self {
        Self::leaf(self.inner.shape.clone(), self.inner.data.clone(), false)
    }

    fn leaf(shape: Vec<usize>, data: Vec<E>, requires_grad: bool) -> Self {
        Tensor {
            inner: Arc::new(Inner {
                id: fresh_id(),
                shape,
                data,
                requires_grad,
                node: None,
            }),
        }
    }

    pub(crate) fn from_op(
        shape: Vec<usize>,
        data: Vec<E>,
        parents: Vec<Tensor<E>>,
        backward: BackFn<E>,
    ) -> Self {
        let requires_grad = parents.iter().any(|p| p.requires_grad());
        let node = if requires_grad {
            Some(Node { parents, backward })
        } else {
            None
        };
        Tensor {
            inner: Arc::new(Inner {
                id: fresh_id(),
                shape,
                data,
                requires_grad,
                node,
            }),
        }
    }

    pub fn id(&self) -> u64 {
        self.inner.id
    }

    pub fn shape(&self) -> &[usize] {
        &self.inner.shape
    }

    pub fn numel(&self) -> usize {
        self.inner.data.len()
    }

    pub fn data(&self) -> &[E] {
        &self.inner.data
    }

    pub fn requires_grad(&self) -> bool {
        self.inner.requires_grad
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> Result<E> {
        if self.numel() != 1 {
            return Err(Error::InvalidShape {
                op: "item",
                shape: self.shape().to_vec(),
                reason: "expected a single element",
            });
        }
        Ok(self.inner.data[0])
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.inner.data.iter().map(|v| v.to_f64()).collect()
    }

    /// Same values, other element type. Detached from the graph.
    pub fn cast<F: Element>(&self) -> Tensor<F> {
        let data = self
            .inner
            .data
            .iter()
            .map(|v| F::from_f64(v.to_f64()))
            .collect();
        Tensor::leaf(self.inner.shape.clone(), data, false)
    }

    pub fn all_finite(&self) -> bool {
        self.inner.data.iter().all(|v| v.is_finite())
    }

    pub fn assert_finite(&self, context: &str) -> Result<()> {
        if self.all_finite() {
            Ok(())
        } else {
            Err(Error::NonFinite {
                context: context.to_string(),
            })
        }
    }

    /// Reverse-mode gradients of a scalar with respect to every reachable
    /// gradient-tracked leaf.
    pub fn backward(&self) -> Result<Gradients<E>> {
        if self.numel() != 1 {
            return Err(Error::InvalidShape {
                op: "backward",
                shape: self.shape().to_vec(),
                reason: "backward requires a scalar",
            });
        }
        let mut grads: HashMap<u64, Vec<E>> = HashMap::new();
        if !self.requires_grad() {
            return Ok(Gradients { map: grads });
        }

        // Iterative post-order over the subgraph that requires gradients.
        let mut order: Vec<Tensor<E>> = Vec::new();
        let mut seen: HashSet<u64> = HashSet::new();
        let mut stack: Vec<(Tensor<E>, bool)> = vec![(self.clone(), false)];
        while let Some((t, expanded)) = stack.pop() {
            if expanded {
                order.push(t);
                continue;
            }
            if !seen.insert(t.id()) {
                continue;
            }
            stack.push((t.clone(), true));
            if let Some(node) = &t.inner.node {
                for p in &node.parents {
                    if p.requires_grad() && !seen.contains(&p.id()) {
                        stack.push((p.clone(), false));
                    }
                }
            }
        }

        grads.insert(self.id(), vec![E::one()]);
        for t in order.iter().rev() {
            let Some(node) = &t.inner.node else { continue };
            let Some(gout) = grads.get(&t.id()) else {
                continue;
            };
            let contributions = (node.backward)(gout);
            debug_assert_eq!(contributions.len(), node.parents.len());
            for (parent, contribution) in node.parents.iter().zip(contributions) {
                if !parent.requires_grad() {
                    continue;
                }
                let Some(c) = contribution else { continue };
                debug_assert_eq!(c.len(), parent.numel());
                match grads.entry(parent.id()) {
                    std::collections::hash_map::Entry::Occupied(mut e) => {
                        for (a, b) in e.get_mut().iter_mut().zip(&c) {
                            *a += *b;
                        }
                    }
                    std::collections::hash_map::Entry::Vacant(e) => {
                        e.insert(c);
                    }
                }
            }
        }
        // Gradients of interior nodes are not part of the contract; keep leaves.
        grads.retain(|id, _| {
            order
                .iter()
                .find(|t| t.id() == *id)
                .map(|t| t.inner.node.is_none())
                .unwrap_or(false)
        });
        Ok(Gradients { map: grads })
    }
}

/// Per-leaf gradients produced by [`Tensor::backward`].
pub struct Gradients<E: Element> {
    map: HashMap<u64, Vec<E>>,
}

impl<E: Element> Gradients<E> {
    pub fn get(&self, tensor: &Tensor<E>) -> Option<&[E]> {
        self.map.get(&tensor.id()).map(|v| v.as_slice())
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }
}
