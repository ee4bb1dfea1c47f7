//! Dense-tensor numerical core with reverse-mode automatic differentiation.
//!
//! Tensors are immutable after creation (except gradient buffers and
//! explicit in-place parameter updates between graph lifetimes). Every
//! operation that participates in differentiation records its parents and
//! a backward closure; calling [`Tensor::backward`] on a scalar result
//! walks the graph in reverse topological order and accumulates gradients
//! into every leaf that requires them.
//!
//! Gradients accumulate across repeated backward calls; the caller resets
//! them explicitly via [`Tensor::zero_grad`].

use std::cell::RefCell;
use std::collections::HashSet;
use std::rc::Rc;

use thiserror::Error;

mod nn;
mod ops;

pub use nn::{
    batch_norm_eval, batch_norm_train, bias_add, conv2d, gather_class, max_pool2, softmax_last,
    upsample_nearest2, BatchNormOutput,
};

/// Element type: 64-bit by default so gradient checks have headroom.
/// The `f32` feature trades precision for training speed.
#[cfg(not(feature = "f32"))]
pub type Real = f64;
#[cfg(feature = "f32")]
pub type Real = f32;

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("{op}: shape mismatch between {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op}: invalid shape {shape:?} ({msg})")]
    InvalidShape {
        op: &'static str,
        shape: Vec<usize>,
        msg: String,
    },
    #[error("data length {len} does not match shape {shape:?}")]
    DataLength { shape: Vec<usize>, len: usize },
    #[error("{op}: input contains NaN or Inf")]
    NonFinite { op: &'static str },
    #[error("backward requires a scalar, got shape {shape:?}")]
    NonScalarBackward { shape: Vec<usize> },
    #[error("{op}: {msg}")]
    BadArgument { op: &'static str, msg: String },
}

pub type Result<T> = std::result::Result<T, TensorError>;

/// Backward closure: maps the output gradient to one optional gradient
/// contribution per parent, in parent order.
type GradFn = Box<dyn Fn(&[Real]) -> Vec<Option<Vec<Real>>>>;

struct Inner {
    shape: Vec<usize>,
    data: RefCell<Vec<Real>>,
    grad: RefCell<Option<Vec<Real>>>,
    requires_grad: bool,
    needs_grad: bool,
    parents: Vec<Tensor>,
    grad_fn: Option<GradFn>,
}

/// Handle to a node in the computation graph. Cloning is cheap (refcount).
#[derive(Clone)]
pub struct Tensor {
    inner: Rc<Inner>,
}

impl std::fmt::Debug for Tensor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.inner.shape)
            .field("requires_grad", &self.inner.requires_grad)
            .finish()
    }
}

fn check_len(shape: &[usize], len: usize) -> Result<()> {
    let numel: usize = shape.iter().product();
    if numel != len {
        return Err(TensorError::DataLength {
            shape: shape.to_vec(),
            len,
        });
    }
    Ok(())
}

impl Tensor {
    /// Constant tensor (no gradient tracking).
    pub fn from_vec(shape: &[usize], data: Vec<Real>) -> Result<Tensor> {
        check_len(shape, data.len())?;
        Ok(Tensor::leaf(shape.to_vec(), data, false))
    }

    /// Leaf tensor that accumulates gradients.
    pub fn param(shape: &[usize], data: Vec<Real>) -> Result<Tensor> {
        check_len(shape, data.len())?;
        Ok(Tensor::leaf(shape.to_vec(), data, true))
    }

    pub fn zeros(shape: &[usize]) -> Tensor {
        let numel = shape.iter().product();
        Tensor::leaf(shape.to_vec(), vec![0.0; numel], false)
    }

    pub fn full(shape: &[usize], value: Real) -> Tensor {
        let numel = shape.iter().product();
        Tensor::leaf(shape.to_vec(), vec![value; numel], false)
    }

    pub fn scalar(value: Real) -> Tensor {
        Tensor::leaf(vec![], vec![value], false)
    }

    fn leaf(shape: Vec<usize>, data: Vec<Real>, requires_grad: bool) -> Tensor {
        Tensor {
            inner: Rc::new(Inner {
                shape,
                data: RefCell::new(data),
                grad: RefCell::new(None),
                requires_grad,
                needs_grad: requires_grad,
                parents: Vec::new(),
                grad_fn: None,
            }),
        }
    }

    /// Internal node constructor. The backward closure is only built when
    /// some parent actually needs a gradient.
    pub(crate) fn from_op<F>(shape: Vec<usize>, data: Vec<Real>, parents: Vec<Tensor>, make_grad_fn: F) -> Tensor
    where
        F: FnOnce() -> GradFn,
    {
        let needs_grad = parents.iter().any(|p| p.inner.needs_grad);
        let grad_fn = if needs_grad { Some(make_grad_fn()) } else { None };
        Tensor {
            inner: Rc::new(Inner {
                shape,
                data: RefCell::new(data),
                grad: RefCell::new(None),
                requires_grad: false,
                needs_grad,
                parents,
                grad_fn,
            }),
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.inner.shape
    }

    pub fn numel(&self) -> usize {
        self.inner.shape.iter().product()
    }

    pub fn requires_grad(&self) -> bool {
        self.inner.requires_grad
    }

    /// Copy of the stored values.
    pub fn values(&self) -> Vec<Real> {
        self.inner.data.borrow().clone()
    }

    /// Run `f` over the stored values without copying.
    pub fn with_data<R>(&self, f: impl FnOnce(&[Real]) -> R) -> R {
        f(&self.inner.data.borrow())
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> Real {
        let data = self.inner.data.borrow();
        assert_eq!(data.len(), 1, "item() on tensor of shape {:?}", self.inner.shape);
        data[0]
    }

    /// Copy of the accumulated gradient, if any.
    pub fn grad(&self) -> Option<Vec<Real>> {
        self.inner.grad.borrow().clone()
    }

    pub fn zero_grad(&self) {
        *self.inner.grad.borrow_mut() = None;
    }

    /// In-place update of a leaf's values (optimizer step). Must not be
    /// called while a recorded graph referencing this tensor is still live,
    /// since saved forward values would go stale.
    pub fn update_data(&self, f: impl FnOnce(&mut [Real])) {
        f(&mut self.inner.data.borrow_mut());
    }

    /// Constant copy detached from the graph.
    pub fn detach(&self) -> Tensor {
        Tensor::leaf(self.inner.shape.clone(), self.values(), false)
    }

    fn key(&self) -> *const Inner {
        Rc::as_ptr(&self.inner)
    }

    fn accumulate_grad(&self, contribution: &[Real]) {
        let mut slot = self.inner.grad.borrow_mut();
        match slot.as_mut() {
            Some(g) => {
                for (gi, ci) in g.iter_mut().zip(contribution) {
                    *gi += ci;
                }
            }
            None => *slot = Some(contribution.to_vec()),
        }
    }

    fn ensure_grad(&self) {
        let mut slot = self.inner.grad.borrow_mut();
        if slot.is_none() {
            *slot = Some(vec![0.0; self.numel()]);
        }
    }

    /// Reverse-mode sweep from a scalar. Every leaf with `requires_grad`
    /// reachable through grad-needing paths ends up with a populated
    /// gradient buffer (zeros when nothing flows).
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(TensorError::NonScalarBackward {
                shape: self.inner.shape.clone(),
            });
        }
        if !self.inner.needs_grad {
            return Ok(());
        }

        // Iterative postorder DFS over grad-needing nodes.
        let mut order: Vec<Tensor> = Vec::new();
        let mut seen: HashSet<*const Inner> = HashSet::new();
        let mut stack: Vec<(Tensor, usize)> = vec![(self.clone(), 0)];
        seen.insert(self.key());
        while let Some((node, child_idx)) = stack.pop() {
            let parents = &node.inner.parents;
            let mut pushed = false;
            for (i, p) in parents.iter().enumerate().skip(child_idx) {
                if p.inner.needs_grad && !seen.contains(&p.key()) {
                    seen.insert(p.key());
                    stack.push((node.clone(), i + 1));
                    stack.push((p.clone(), 0));
                    pushed = true;
                    break;
                }
            }
            if !pushed {
                order.push(node);
            }
        }

        for node in &order {
            node.ensure_grad();
        }
        self.accumulate_grad(&[1.0]);

        for node in order.iter().rev() {
            let Some(grad_fn) = node.inner.grad_fn.as_ref() else {
                continue;
            };
            let grad_out = node.inner.grad.borrow().clone().expect("grad allocated above");
            let contributions = grad_fn(&grad_out);
            debug_assert_eq!(contributions.len(), node.inner.parents.len());
            for (parent, contrib) in node.inner.parents.iter().zip(contributions) {
                if let Some(c) = contrib {
                    if parent.inner.needs_grad {
                        debug_assert_eq!(c.len(), parent.numel());
                        parent.accumulate_grad(&c);
                    }
                }
            }
        }
        Ok(())
    }
}
