//! Reverse-mode differentiation tape.
//!
//! Every kernel applied to a [`Var`] appends one node holding its output and
//! whatever it needs for the vector-Jacobian product. Nodes are appended in
//! evaluation order, so the node list is already topologically sorted and
//! `backward` is a single reverse sweep.

use std::cell::{Ref, RefCell};
use std::sync::Arc;

use crate::element::Element;
use crate::error::{Result, TensorError};
use crate::ops::Op;
use crate::tensor::Tensor;

pub type NodeId = usize;

pub(crate) struct Node<E: Element> {
    pub(crate) value: Arc<Tensor<E>>,
    pub(crate) op: Op<E>,
    pub(crate) requires_grad: bool,
}

/// Single-writer recording of a computation.
pub struct Tape<E: Element> {
    nodes: RefCell<Vec<Node<E>>>,
}

/// Handle to a value recorded on a [`Tape`].
pub struct Var<'t, E: Element> {
    pub(crate) tape: &'t Tape<E>,
    pub(crate) id: NodeId,
}

impl<E: Element> Clone for Var<'_, E> {
    fn clone(&self) -> Self {
        *self
    }
}

impl<E: Element> Copy for Var<'_, E> {}

impl<E: Element> std::fmt::Debug for Var<'_, E> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var#{}{:?}", self.id, self.shape())
    }
}

impl<E: Element> Default for Tape<E> {
    fn default() -> Self {
        Self::new()
    }
}

impl<E: Element> Tape<E> {
    pub fn new() -> Self {
        Self { nodes: RefCell::new(Vec::new()) }
    }

    /// Records a leaf. Gradients are produced for it only if `requires_grad`.
    pub fn leaf(&self, value: Tensor<E>, requires_grad: bool) -> Var<'_, E> {
        self.leaf_shared(Arc::new(value), requires_grad)
    }

    /// Leaf sharing storage with the caller (parameters are bound this way).
    pub fn leaf_shared(&self, value: Arc<Tensor<E>>, requires_grad: bool) -> Var<'_, E> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { value, op: Op::Leaf, requires_grad });
        Var { tape: self, id: nodes.len() - 1 }
    }

    pub fn constant(&self, value: Tensor<E>) -> Var<'_, E> {
        self.leaf(value, false)
    }

    pub fn variable(&self, value: Tensor<E>) -> Var<'_, E> {
        self.leaf(value, true)
    }

    pub(crate) fn push(&self, value: Tensor<E>, op: Op<E>) -> Var<'_, E> {
        let mut nodes = self.nodes.borrow_mut();
        let requires_grad = op.parents().iter().any(|&p| nodes[p].requires_grad);
        nodes.push(Node { value: Arc::new(value), op, requires_grad });
        Var { tape: self, id: nodes.len() - 1 }
    }

    pub(crate) fn value(&self, id: NodeId) -> Arc<Tensor<E>> {
        self.nodes.borrow()[id].value.clone()
    }

    pub(crate) fn nodes(&self) -> Ref<'_, Vec<Node<E>>> {
        self.nodes.borrow()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Name of the first kernel that produced a NaN or infinity, if any.
    ///
    /// Scans the whole tape, so it is meant for diagnostics.
    /// Active branch of every piecewise-linear element on the tape, used to
    /// detect finite-difference stencils that straddle a kink.
    pub fn branch_signature(&self) -> Vec<bool> {
        let nodes = self.nodes.borrow();
        let mut sig = Vec::new();
        for n in nodes.iter() {
            if let Op::LeakyRelu(..) = n.op {
                sig.extend(n.value.data().iter().map(|v| *v > E::zero()));
            }
        }
        sig
    }

    pub fn first_non_finite(&self) -> Option<&'static str> {
        self.nodes.borrow().iter().find(|n| !n.value.is_finite()).map(|n| n.op.name())
    }

    pub fn check_finite(&self) -> Result<()> {
        match self.first_non_finite() {
            Some(op) => Err(TensorError::NonFinite { op }),
            None => Ok(()),
        }
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var<'_, E>) -> Result<Gradients<E>> {
        // Non-finite intermediates reach the loss, so only scan when it is bad.
        if !self.value(loss.id).is_finite() {
            self.check_finite()?;
        }
        let nodes = self.nodes.borrow();
        let root = &nodes[loss.id];
        if root.value.len() != 1 {
            return Err(TensorError::Usage(format!(
                "backward needs a scalar loss, got shape {:?}",
                root.value.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor<E>>> = (0..nodes.len()).map(|_| None).collect();
        grads[loss.id] = Some(Tensor::ones(root.value.shape().to_vec()));
        for id in (0..=loss.id).rev() {
            let node = &nodes[id];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            node.op.backward(&nodes, &node.value, &g, &mut grads);
            grads[id] = Some(g);
        }
        for (id, node) in nodes.iter().enumerate() {
            if node.requires_grad && matches!(node.op, Op::Leaf) && grads[id].is_none() {
                grads[id] = Some(Tensor::zeros(node.value.shape().to_vec()));
            }
        }
        Ok(Gradients { grads })
    }
}

pub(crate) fn accumulate<E: Element>(slot: &mut Option<Tensor<E>>, g: Tensor<E>) {
    match slot {
        Some(acc) => {
            debug_assert_eq!(acc.shape(), g.shape());
            for (a, b) in acc.data_mut().iter_mut().zip(g.data()) {
                *a = *a + *b;
            }
        }
        None => *slot = Some(g),
    }
}

/// Gradient map produced by [`Tape::backward`], keyed by node.
pub struct Gradients<E: Element> {
    grads: Vec<Option<Tensor<E>>>,
}

impl<E: Element> Gradients<E> {
    pub fn get(&self, var: Var<'_, E>) -> Option<&Tensor<E>> {
        self.grads.get(var.id).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, var: Var<'_, E>) -> Option<Tensor<E>> {
        self.grads.get_mut(var.id).and_then(|g| g.take())
    }

    /// Gradient with respect to `var`; zeros when no path reaches it.
    pub fn wrt(&self, var: Var<'_, E>) -> Tensor<E> {
        self.get(var).cloned().unwrap_or_else(|| Tensor::zeros(var.shape()))
    }
}

impl<'t, E: Element> Var<'t, E> {
    pub fn id(&self) -> NodeId {
        self.id
    }

    pub fn tape(&self) -> &'t Tape<E> {
        self.tape
    }

    pub fn value(&self) -> Arc<Tensor<E>> {
        self.tape.value(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.nodes()[self.id].value.shape().to_vec()
    }

    pub fn len(&self) -> usize {
        self.tape.nodes()[self.id].value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.nodes()[self.id].requires_grad
    }

    /// Scalar value (first element).
    pub fn item(&self) -> E {
        self.tape.nodes()[self.id].value.data()[0]
    }

    pub(crate) fn same_tape(&self, other: &Var<'_, E>) {
        assert!(std::ptr::eq(self.tape, other.tape), "vars recorded on different tapes");
    }
}
