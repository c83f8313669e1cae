//! The recording tape and the handle type that operations are written against.

use std::cell::RefCell;
use std::fmt;
use std::rc::Rc;

use super::{DiffError, Tensor};

/// Computes the gradient contribution for each parent from the output gradient.
///
/// The second argument says which parents actually need a gradient; entries for
/// the others may be `None`.
pub(crate) type BackwardFn = Box<dyn Fn(&Tensor, &[bool]) -> Vec<Option<Tensor>>>;

struct Node {
    value: Rc<Tensor>,
    requires_grad: bool,
    parents: Vec<usize>,
    backward: Option<BackwardFn>,
}

#[derive(Default)]
struct Inner {
    nodes: Vec<Node>,
    grads: Vec<Option<Tensor>>,
    consumed: bool,
}

/// A dynamic reverse-mode tape. One graph per forward pass.
///
/// Nodes are appended in creation order, which is a topological order, so the
/// backward sweep simply walks the node list in reverse.
#[derive(Default)]
pub struct Graph {
    inner: RefCell<Inner>,
}

/// Handle to a value recorded on a [`Graph`].
#[derive(Clone, Copy)]
pub struct DiffTensor<'g> {
    pub(crate) graph: &'g Graph,
    pub(crate) id: usize,
}

impl fmt::Debug for DiffTensor<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DiffTensor")
            .field("id", &self.id)
            .field("shape", &self.shape())
            .field("requires_grad", &self.requires_grad())
            .finish()
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    /// Records a leaf tensor.
    pub fn leaf(&self, value: Tensor, requires_grad: bool) -> DiffTensor<'_> {
        self.record(value, requires_grad, Vec::new(), None)
    }

    /// Records a trainable leaf.
    pub fn variable(&self, value: Tensor) -> DiffTensor<'_> {
        self.leaf(value, true)
    }

    /// Records a leaf that never receives gradients.
    pub fn constant(&self, value: Tensor) -> DiffTensor<'_> {
        self.leaf(value, false)
    }

    pub fn len(&self) -> usize {
        self.inner.borrow().nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn record(
        &self,
        value: Tensor,
        requires_grad: bool,
        parents: Vec<usize>,
        backward: Option<BackwardFn>,
    ) -> DiffTensor<'_> {
        let mut inner = self.inner.borrow_mut();
        let id = inner.nodes.len();
        inner.nodes.push(Node { value: Rc::new(value), requires_grad, parents, backward });
        DiffTensor { graph: self, id }
    }

    /// Records the result of an operation on `parents`.
    ///
    /// The backward rule is dropped when no parent requires a gradient.
    pub(crate) fn push_op<F>(&self, value: Tensor, parents: &[DiffTensor<'_>], backward: F) -> DiffTensor<'_>
    where
        F: Fn(&Tensor, &[bool]) -> Vec<Option<Tensor>> + 'static,
    {
        let requires_grad = parents.iter().any(|p| p.requires_grad());
        let ids = parents.iter().map(|p| p.id).collect();
        let backward: Option<BackwardFn> = if requires_grad { Some(Box::new(backward)) } else { None };
        self.record(value, requires_grad, ids, backward)
    }

    pub(crate) fn value_of(&self, id: usize) -> Rc<Tensor> {
        Rc::clone(&self.inner.borrow().nodes[id].value)
    }

    fn requires_grad_of(&self, id: usize) -> bool {
        self.inner.borrow().nodes[id].requires_grad
    }

    /// Propagates gradients from the scalar `loss` to every reachable node.
    ///
    /// May be called once per graph; the backward rules are released afterwards.
    pub fn backward(&self, loss: DiffTensor<'_>) -> Result<(), DiffError> {
        assert!(std::ptr::eq(loss.graph, self), "loss belongs to a different graph");
        let mut inner = self.inner.borrow_mut();
        if inner.consumed {
            return Err(DiffError::BackwardTwice);
        }
        let loss_shape = inner.nodes[loss.id].value.shape().to_vec();
        if inner.nodes[loss.id].value.numel() != 1 {
            return Err(DiffError::NonScalarLoss(loss_shape));
        }
        inner.consumed = true;
        let n = inner.nodes.len();
        let mut grads: Vec<Option<Tensor>> = (0..n).map(|_| None).collect();
        grads[loss.id] = Some(Tensor::ones(&loss_shape));
        for id in (0..=loss.id).rev() {
            let Some(grad) = grads[id].take() else { continue };
            let rule = inner.nodes[id].backward.take();
            if let Some(rule) = rule {
                let parents = inner.nodes[id].parents.clone();
                let needs: Vec<bool> = parents.iter().map(|&p| inner.nodes[p].requires_grad).collect();
                let contributions = rule(&grad, &needs);
                debug_assert_eq!(contributions.len(), parents.len());
                for ((&p, contrib), need) in parents.iter().zip(contributions).zip(needs) {
                    if !need {
                        continue;
                    }
                    if let Some(c) = contrib {
                        match &mut grads[p] {
                            Some(acc) => acc.add_assign(&c),
                            slot @ None => *slot = Some(c),
                        }
                    }
                }
            }
            grads[id] = Some(grad);
        }
        for node in inner.nodes.iter_mut() {
            node.backward = None;
        }
        for (id, g) in grads.iter_mut().enumerate() {
            if !inner.nodes[id].requires_grad {
                *g = None;
            }
        }
        inner.grads = grads;
        Ok(())
    }

    /// Gradient of the last backward pass with respect to `x`.
    pub fn grad(&self, x: DiffTensor<'_>) -> Option<Tensor> {
        self.inner.borrow().grads.get(x.id).cloned().flatten()
    }
}

impl<'g> DiffTensor<'g> {
    pub fn graph(&self) -> &'g Graph {
        self.graph
    }

    /// A shared reference to the forward value.
    pub fn value(&self) -> Rc<Tensor> {
        self.graph.value_of(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.value().shape().to_vec()
    }

    pub fn numel(&self) -> usize {
        self.value().numel()
    }

    pub fn requires_grad(&self) -> bool {
        self.graph.requires_grad_of(self.id)
    }

    /// Forward value of a one-element tensor.
    pub fn item(&self) -> f64 {
        self.value().item()
    }

    pub fn grad(&self) -> Option<Tensor> {
        self.graph.grad(*self)
    }
}
