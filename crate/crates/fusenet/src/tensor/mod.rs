//! Dynamically shaped tensors with a recorded operation graph and
//! reverse-mode differentiation.
//!
//! A [`Tensor`] is a cheaply clonable handle (`Rc`) to an immutable shape
//! plus interior-mutable value and gradient buffers. Operations in [`ops`]
//! validate shapes, compute forward values, and, when gradients are enabled
//! and some input requires them, record a backward closure together with the
//! parent handles. [`backward`] topologically sorts the recorded graph from
//! a scalar loss and accumulates gradients by summation, so a value consumed
//! by several operations receives the sum of its uses' contributions.
//!
//! Graphs are thread-local by construction (`Rc`, no `Send`); parallelism in
//! this crate happens at the granularity of whole training runs, never inside
//! a single graph.

pub mod ops;
pub mod optim;

use std::cell::{Cell, RefCell};
use std::collections::HashSet;
use std::fmt;
use std::rc::Rc;

use crate::error::{Error, Result};
use crate::numeric_err;

/// Scalar types the engine computes with. `f32` is the working precision for
/// networks; `f64` exists so gradients can be checked against central finite
/// differences without drowning in roundoff.
pub trait Element:
    num_traits::Float
    + num_traits::NumAssign
    + num_traits::FromPrimitive
    + num_traits::ToPrimitive
    + Copy
    + fmt::Debug
    + fmt::Display
    + 'static
{
    /// Conversion from `f64` (possibly rounding), for scalar hyperparameters.
    fn of_f64(v: f64) -> Self {
        <Self as num_traits::FromPrimitive>::from_f64(v).unwrap()
    }
    /// Widening conversion to `f64`, for metrics and reporting.
    fn as_f64(self) -> f64 {
        <Self as num_traits::ToPrimitive>::to_f64(&self).unwrap()
    }
}

impl Element for f32 {}
impl Element for f64 {}

thread_local! {
    static GRAD_ENABLED: Cell<bool> = const { Cell::new(true) };
    static NEXT_ID: Cell<u64> = const { Cell::new(1) };
}

fn next_id() -> u64 {
    NEXT_ID.with(|c| {
        let id = c.get();
        c.set(id + 1);
        id
    })
}

/// Whether newly created operations record backward closures.
pub fn grad_enabled() -> bool {
    GRAD_ENABLED.with(|c| c.get())
}

/// Disables gradient recording for the guard's lifetime (inference passes,
/// metric evaluation). Nesting restores the previous state correctly.
pub struct NoGradGuard {
    prev: bool,
}

impl NoGradGuard {
    #[allow(clippy::new_without_default)]
    pub fn new() -> Self {
        let prev = GRAD_ENABLED.with(|c| c.replace(false));
        NoGradGuard { prev }
    }
}

impl Drop for NoGradGuard {
    fn drop(&mut self) {
        let prev = self.prev;
        GRAD_ENABLED.with(|c| c.set(prev));
    }
}

type BackwardFn<E> = Box<dyn Fn(&[E])>;

struct Node<E: Element> {
    id: u64,
    shape: Vec<usize>,
    values: RefCell<Vec<E>>,
    requires_grad: bool,
    grad: RefCell<Option<Vec<E>>>,
    /// Parents in the recorded graph, used for the topological sort. The
    /// backward closure captures its own handles to whatever it needs.
    parents: Vec<Tensor<E>>,
    backward: Option<BackwardFn<E>>,
}

/// Handle to one node of the computation graph.
pub struct Tensor<E: Element> {
    node: Rc<Node<E>>,
}

impl<E: Element> Clone for Tensor<E> {
    fn clone(&self) -> Self {
        Tensor { node: Rc::clone(&self.node) }
    }
}

impl<E: Element> fmt::Debug for Tensor<E> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("id", &self.node.id)
            .field("shape", &self.node.shape)
            .field("requires_grad", &self.node.requires_grad)
            .finish()
    }
}

impl<E: Element> Tensor<E> {
    /// A constant leaf: no gradient is ever accumulated into it.
    pub fn from_values(shape: &[usize], values: Vec<E>) -> Result<Self> {
        Self::leaf(shape, values, false)
    }

    /// A trainable leaf: gradients accumulate into it during [`backward`].
    pub fn param(shape: &[usize], values: Vec<E>) -> Result<Self> {
        Self::leaf(shape, values, true)
    }

    /// Scalar constant (rank 0, one value).
    pub fn scalar(v: E) -> Self {
        Self::leaf(&[], vec![v], false).expect("scalar leaf")
    }

    fn leaf(shape: &[usize], values: Vec<E>, requires_grad: bool) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if values.len() != numel {
            return Err(Error::Config(format!(
                "tensor shape {:?} implies {} values, got {}",
                shape,
                numel,
                values.len()
            )));
        }
        Ok(Tensor {
            node: Rc::new(Node {
                id: next_id(),
                shape: shape.to_vec(),
                values: RefCell::new(values),
                requires_grad,
                grad: RefCell::new(None),
                parents: Vec::new(),
                backward: None,
            }),
        })
    }

    /// An interior node produced by an operation. Called by `ops` only.
    /// When gradients are disabled or no parent requires them, the node is
    /// created detached (no parents, no backward closure).
    pub(crate) fn from_op(
        shape: Vec<usize>,
        values: Vec<E>,
        parents: Vec<Tensor<E>>,
        backward: impl FnOnce() -> BackwardFn<E>,
    ) -> Self {
        let record = grad_enabled() && parents.iter().any(|p| p.requires_grad());
        let (parents, backward) = if record {
            (parents, Some(backward()))
        } else {
            (Vec::new(), None)
        };
        Tensor {
            node: Rc::new(Node {
                id: next_id(),
                shape,
                values: RefCell::new(values),
                requires_grad: record,
                grad: RefCell::new(None),
                parents,
                backward,
            }),
        }
    }

    pub fn id(&self) -> u64 {
        self.node.id
    }

    pub fn shape(&self) -> &[usize] {
        &self.node.shape
    }

    pub fn numel(&self) -> usize {
        self.node.shape.iter().product()
    }

    pub fn requires_grad(&self) -> bool {
        self.node.requires_grad
    }

    /// Immutable view of the values. Panics if a mutable borrow is live
    /// (never the case outside a buggy op implementation).
    pub fn values(&self) -> std::cell::Ref<'_, Vec<E>> {
        self.node.values.borrow()
    }

    /// Copies the values out.
    pub fn values_vec(&self) -> Vec<E> {
        self.node.values.borrow().clone()
    }

    /// Single value of a scalar tensor.
    pub fn item(&self) -> E {
        debug_assert_eq!(self.numel(), 1, "item() on non-scalar tensor");
        self.node.values.borrow()[0]
    }

    /// Overwrites the values in place (optimizer updates, checkpoint load).
    pub fn set_values(&self, new: &[E]) {
        let mut v = self.node.values.borrow_mut();
        assert_eq!(v.len(), new.len(), "set_values length mismatch");
        v.copy_from_slice(new);
    }

    /// Current gradient, if any has been accumulated.
    pub fn grad(&self) -> Option<Vec<E>> {
        self.node.grad.borrow().clone()
    }

    pub fn zero_grad(&self) {
        *self.node.grad.borrow_mut() = None;
    }

    /// Adds `contrib` into the gradient buffer, allocating it on first use.
    pub(crate) fn accumulate_grad(&self, contrib: &[E]) {
        debug_assert_eq!(contrib.len(), self.numel());
        let mut slot = self.node.grad.borrow_mut();
        match slot.as_mut() {
            Some(g) => {
                for (gi, ci) in g.iter_mut().zip(contrib) {
                    *gi += *ci;
                }
            }
            None => *slot = Some(contrib.to_vec()),
        }
    }

    fn has_backward(&self) -> bool {
        self.node.backward.is_some()
    }
}

/// Runs reverse-mode differentiation from a scalar `loss`, accumulating
/// gradients into every reachable tensor with `requires_grad`. Multiple uses
/// of a tensor sum their contributions. The graph is a DAG by construction
/// (nodes only ever point at pre-existing nodes), so no cycle handling is
/// needed.
pub fn backward<E: Element>(loss: &Tensor<E>) -> Result<()> {
    if loss.numel() != 1 {
        return Err(Error::Config(format!(
            "backward requires a scalar loss, got shape {:?}",
            loss.shape()
        )));
    }
    if !loss.requires_grad() {
        return Err(Error::Config(
            "backward on a tensor with no recorded graph (requires_grad is false)".into(),
        ));
    }
    if !loss.item().is_finite() {
        return Err(numeric_err!("backward on non-finite loss {}", loss.item()));
    }

    // Iterative postorder DFS over parents, newest-first replay.
    let order = topo_order(loss);
    loss.accumulate_grad(&[E::one()]);
    for t in order.iter().rev() {
        if !t.has_backward() {
            continue;
        }
        let grad = t.node.grad.borrow().clone();
        if let Some(g) = grad {
            (t.node.backward.as_ref().unwrap())(&g);
        }
    }
    Ok(())
}

fn topo_order<E: Element>(root: &Tensor<E>) -> Vec<Tensor<E>> {
    let mut order: Vec<Tensor<E>> = Vec::new();
    let mut visited: HashSet<u64> = HashSet::new();
    // Stack of (node, next-parent-index) frames.
    let mut stack: Vec<(Tensor<E>, usize)> = Vec::new();
    if visited.insert(root.id()) {
        stack.push((root.clone(), 0));
    }
    while let Some((t, mut idx)) = stack.pop() {
        let parents = &t.node.parents;
        let mut descended = false;
        while idx < parents.len() {
            let p = &parents[idx];
            idx += 1;
            if p.requires_grad() && visited.insert(p.id()) {
                stack.push((t.clone(), idx));
                stack.push((p.clone(), 0));
                descended = true;
                break;
            }
        }
        if !descended {
            order.push(t);
        }
    }
    order
}

/// Validates every value is finite; used by ops under debug assertions and
/// by training code on losses in all builds.
pub(crate) fn check_finite<E: Element>(what: &str, values: &[E]) -> Result<()> {
    if let Some((i, v)) = values.iter().enumerate().find(|(_, v)| !v.is_finite()) {
        return Err(numeric_err!("{what} produced non-finite value {v} at index {i}"));
    }
    Ok(())
}
