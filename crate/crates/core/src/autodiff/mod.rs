//! Reverse-mode automatic differentiation over [`Tensor`]s.
//!
//! A [`Graph`] is a tape: every op appends a node holding its output value
//! and a backward rule. [`Graph::backward`] replays the tape in reverse,
//! visiting each node once and accumulating (`+=`) gradients into its parents.

mod conv;
mod elementwise;
pub mod gradcheck;
mod linalg;
mod norm;
mod sample;
mod shape;

use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Error, Result};
use crate::tensor::{Precision, Tensor};

pub use conv::{conv2d_output_extent, ConvSpec};
pub use elementwise::{gelu_scalar, normal_cdf, sigmoid_scalar};

static NEXT_GRAPH_ID: AtomicU64 = AtomicU64::new(1);

/// Handle to a value recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var {
    graph: u64,
    index: usize,
}

/// Inputs handed to a backward rule.
pub(crate) struct BackwardCtx<'a> {
    pub inputs: Vec<&'a Tensor>,
    pub output: &'a Tensor,
    pub grad: &'a Tensor,
    /// `needs[i]` is false when input `i` does not require a gradient.
    pub needs: Vec<bool>,
}

pub(crate) type BackwardFn = Box<dyn Fn(&BackwardCtx<'_>) -> Vec<Option<Tensor>>>;

struct Node {
    value: Tensor,
    parents: Vec<usize>,
    backward: Option<BackwardFn>,
    requires_grad: bool,
}

pub struct Graph {
    id: u64,
    nodes: Vec<Node>,
    precision: Precision,
    grad_enabled: bool,
}

impl Graph {
    /// A graph that records backward rules.
    pub fn new(precision: Precision) -> Self {
        Graph {
            id: NEXT_GRAPH_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
            precision,
            grad_enabled: true,
        }
    }

    /// A graph that evaluates only; [`Graph::backward`] yields no gradients.
    pub fn inference(precision: Precision) -> Self {
        Graph { grad_enabled: false, ..Graph::new(precision) }
    }

    pub fn precision(&self) -> Precision {
        self.precision
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records a value that never receives a gradient.
    pub fn constant(&mut self, mut value: Tensor) -> Var {
        value.round_to(self.precision);
        self.push_node(value, Vec::new(), None, false)
    }

    /// Records a differentiable leaf (a parameter or an input under test).
    pub fn leaf(&mut self, mut value: Tensor) -> Var {
        value.round_to(self.precision);
        let rg = self.grad_enabled;
        self.push_node(value, Vec::new(), None, rg)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        self.check(v);
        &self.nodes[v.index].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.value(v).shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.check(v);
        self.nodes[v.index].requires_grad
    }

    fn check(&self, v: Var) {
        assert_eq!(v.graph, self.id, "Var used with a graph that did not record it");
    }

    fn push_node(
        &mut self,
        value: Tensor,
        parents: Vec<usize>,
        backward: Option<BackwardFn>,
        requires_grad: bool,
    ) -> Var {
        let index = self.nodes.len();
        self.nodes.push(Node { value, parents, backward, requires_grad });
        Var { graph: self.id, index }
    }

    /// Appends an op output. Rounds to the active precision and rejects
    /// non-finite results.
    pub(crate) fn push(
        &mut self,
        op: &'static str,
        mut value: Tensor,
        parents: &[Var],
        backward: BackwardFn,
    ) -> Result<Var> {
        value.round_to(self.precision);
        if !value.is_finite() {
            return Err(Error::NonFinite { op });
        }
        for &p in parents {
            self.check(p);
        }
        let requires_grad =
            self.grad_enabled && parents.iter().any(|p| self.nodes[p.index].requires_grad);
        let parents: Vec<usize> = parents.iter().map(|p| p.index).collect();
        let backward = if requires_grad { Some(backward) } else { None };
        Ok(self.push_node(value, parents, backward, requires_grad))
    }

    /// Back-propagates from a one-element `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if loss.graph != self.id || loss.index >= self.nodes.len() {
            return Err(Error::contract("backward", "loss was not recorded on this graph"));
        }
        let lv = &self.nodes[loss.index].value;
        if lv.numel() != 1 {
            return Err(Error::contract(
                "backward",
                format!("loss must have one element, has shape {:?}", lv.shape()),
            ));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        if !self.nodes[loss.index].requires_grad {
            return Ok(Gradients { graph: self.id, grads });
        }
        grads[loss.index] = Some(Tensor::full(lv.shape(), 1.0));

        for i in (0..=loss.index).rev() {
            let node = &self.nodes[i];
            let Some(rule) = node.backward.as_ref() else { continue };
            // Interior gradients are released once propagated.
            let Some(g) = grads[i].take() else { continue };
            let ctx = BackwardCtx {
                inputs: node.parents.iter().map(|&p| &self.nodes[p].value).collect(),
                output: &node.value,
                grad: &g,
                needs: node.parents.iter().map(|&p| self.nodes[p].requires_grad).collect(),
            };
            let parent_grads = rule(&ctx);
            debug_assert_eq!(parent_grads.len(), node.parents.len());
            for (&p, pg) in node.parents.iter().zip(parent_grads) {
                let Some(pg) = pg else { continue };
                if !self.nodes[p].requires_grad {
                    continue;
                }
                debug_assert_eq!(pg.shape(), self.nodes[p].value.shape());
                match &mut grads[p] {
                    Some(acc) => acc.add_assign(&pg),
                    slot @ None => *slot = Some(pg),
                }
            }
        }
        Ok(Gradients { graph: self.id, grads })
    }
}

/// Leaf gradients produced by [`Graph::backward`].
pub struct Gradients {
    graph: u64,
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of a leaf, or `None` if the loss does not depend on it.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        assert_eq!(v.graph, self.graph, "Var from a different graph");
        self.grads.get(v.index).and_then(|g| g.as_ref())
    }

    /// Gradient of a leaf, zero-filled when disconnected.
    pub fn get_or_zeros(&self, graph: &Graph, v: Var) -> Tensor {
        self.get(v).cloned().unwrap_or_else(|| Tensor::zeros(graph.shape(v)))
    }
}
