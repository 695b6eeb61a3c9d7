//! Minimal reverse-mode automatic differentiation engine.
//!
//! Tensors form a dynamically built, acyclic computation graph. Calling
//! [`Tensor::backward`] on a scalar walks the graph once in reverse
//! topological order and accumulates gradients into every reachable tensor
//! with `requires_grad` set. Graphs are rebuilt on every forward pass and are
//! confined to a single thread; individual ops may parallelize internally
//! with a fixed reduction order so results stay deterministic.

mod adam;
pub mod ops;

pub use adam::{adam_step, AdamState};

use std::cell::{Ref, RefCell, RefMut};
use std::collections::HashSet;
use std::rc::Rc;
use std::sync::atomic::{AtomicU64, Ordering};

use rand::Rng;
use thiserror::Error;

use crate::scalar::Scalar;

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },
    #[error("{op} expects a scalar tensor, got shape {shape:?}")]
    NotScalar { op: &'static str, shape: Vec<usize> },
    #[error("parameter {index} ({name}) has no gradient; run backward() first")]
    MissingGrad { index: usize, name: String },
    #[error("invalid argument for {op}: {detail}")]
    InvalidArgument { op: &'static str, detail: String },
}

static NEXT_ID: AtomicU64 = AtomicU64::new(0);

/// Backward rule of one graph node: reads the output's gradient and
/// accumulates into the parents it captured.
type BackwardFn<T> = Box<dyn Fn(&Tensor<T>)>;

struct Node<T: Scalar> {
    parents: Vec<Tensor<T>>,
    backward: BackwardFn<T>,
}

struct Inner<T: Scalar> {
    id: u64,
    shape: Vec<usize>,
    data: RefCell<Vec<T>>,
    grad: RefCell<Option<Vec<T>>>,
    requires_grad: bool,
    node: Option<Node<T>>,
}

/// Shared handle to a tensor; clones alias the same storage.
pub struct Tensor<T: Scalar>(Rc<Inner<T>>);

impl<T: Scalar> Clone for Tensor<T> {
    fn clone(&self) -> Self {
        Tensor(Rc::clone(&self.0))
    }
}

impl<T: Scalar> Tensor<T> {
    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Self {
        assert_eq!(
            shape.iter().product::<usize>(),
            data.len(),
            "data length {} does not match shape {:?}",
            data.len(),
            shape
        );
        Tensor(Rc::new(Inner {
            id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
            shape: shape.to_vec(),
            data: RefCell::new(data),
            grad: RefCell::new(None),
            requires_grad: false,
            node: None,
        }))
    }

    pub fn scalar(v: T) -> Self {
        Self::from_vec(&[1], vec![v])
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::from_vec(shape, vec![T::zero(); shape.iter().product()])
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::from_vec(shape, vec![T::one(); shape.iter().product()])
    }

    pub fn full(shape: &[usize], v: T) -> Self {
        Self::from_vec(shape, vec![v; shape.iter().product()])
    }

    /// Standard-normal fill scaled by `std`, for parameter init.
    pub fn randn<R: Rng>(shape: &[usize], std: f64, rng: &mut R) -> Self {
        let n = shape.iter().product();
        let mut data = Vec::with_capacity(n);
        for _ in 0..n {
            // Box-Muller keeps the dependency surface small and is identical
            // across f32/f64 modes given the same u64 stream.
            let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
            let u2: f64 = rng.gen::<f64>();
            let z = (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos();
            data.push(T::from_f64(z * std));
        }
        Self::from_vec(shape, data)
    }

    pub fn requires_grad(self) -> Self {
        let inner = Rc::try_unwrap(self.0).unwrap_or_else(|rc| Inner {
            id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
            shape: rc.shape.clone(),
            data: RefCell::new(rc.data.borrow().clone()),
            grad: RefCell::new(None),
            requires_grad: true,
            node: None,
        });
        Tensor(Rc::new(Inner {
            requires_grad: true,
            ..inner
        }))
    }

    pub(crate) fn from_op(
        shape: Vec<usize>,
        data: Vec<T>,
        parents: Vec<Tensor<T>>,
        backward: BackwardFn<T>,
    ) -> Self {
        let needs_grad = parents.iter().any(|p| p.0.requires_grad || p.0.node.is_some());
        let node = if needs_grad {
            Some(Node { parents, backward })
        } else {
            None
        };
        Tensor(Rc::new(Inner {
            id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
            shape,
            data: RefCell::new(data),
            grad: RefCell::new(None),
            requires_grad: needs_grad,
            node,
        }))
    }

    pub fn shape(&self) -> &[usize] {
        &self.0.shape
    }

    pub fn numel(&self) -> usize {
        self.0.shape.iter().product()
    }

    pub fn data(&self) -> Ref<'_, Vec<T>> {
        self.0.data.borrow()
    }

    pub fn data_mut(&self) -> RefMut<'_, Vec<T>> {
        self.0.data.borrow_mut()
    }

    pub fn grad(&self) -> Option<Vec<T>> {
        self.0.grad.borrow().clone()
    }

    pub fn needs_grad(&self) -> bool {
        self.0.requires_grad
    }

    pub fn item(&self) -> T {
        assert_eq!(self.numel(), 1, "item() on non-scalar tensor");
        self.0.data.borrow()[0]
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.0.data.borrow().iter().map(|v| v.as_f64()).collect()
    }

    /// Leaf copy of this tensor's values, cut out of the graph.
    pub fn detach(&self) -> Self {
        Self::from_vec(&self.0.shape, self.0.data.borrow().clone())
    }

    pub fn zero_grad(&self) {
        *self.0.grad.borrow_mut() = None;
    }

    pub(crate) fn accumulate_grad(&self, g: &[T]) {
        let mut slot = self.0.grad.borrow_mut();
        match slot.as_mut() {
            Some(buf) => {
                for (dst, src) in buf.iter_mut().zip(g) {
                    *dst += *src;
                }
            }
            None => *slot = Some(g.to_vec()),
        }
    }

    pub(crate) fn grad_ref(&self) -> Ref<'_, Option<Vec<T>>> {
        self.0.grad.borrow()
    }

    /// Reverse-mode sweep from a scalar loss. Gradients accumulate
    /// additively across repeated calls; callers zero them between steps.
    pub fn backward(&self) -> Result<(), TensorError> {
        if self.numel() != 1 {
            return Err(TensorError::NotScalar {
                op: "backward",
                shape: self.0.shape.clone(),
            });
        }
        self.accumulate_grad(&[T::one()]);

        // Iterative postorder DFS; reversing it gives a topological order
        // with the loss first, so each node runs exactly once.
        let mut order: Vec<Tensor<T>> = Vec::new();
        let mut visited: HashSet<u64> = HashSet::new();
        let mut stack: Vec<(Tensor<T>, usize)> = vec![(self.clone(), 0)];
        visited.insert(self.0.id);
        while let Some((t, child_idx)) = stack.pop() {
            let parents: &[Tensor<T>] = match &t.0.node {
                Some(n) => &n.parents,
                None => &[],
            };
            if child_idx < parents.len() {
                let next = parents[child_idx].clone();
                stack.push((t, child_idx + 1));
                if visited.insert(next.0.id) {
                    stack.push((next, 0));
                }
            } else {
                order.push(t);
            }
        }
        for t in order.iter().rev() {
            if let Some(node) = &t.0.node {
                if t.0.grad.borrow().is_some() {
                    (node.backward)(t);
                }
            }
        }
        Ok(())
    }
}

impl<T: Scalar> std::fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.0.shape)
            .field("requires_grad", &self.0.requires_grad)
            .finish()
    }
}
