//! Tape-based reverse-mode automatic differentiation over [`Tensor`]s.
//!
//! A [`Graph`] records every operation of one forward pass in execution order,
//! which is already a topological order. [`Graph::backward`] walks the tape in
//! reverse, so each node is visited exactly once. Tapes are rebuilt for every
//! forward pass.
//!
//! Leaves are either constants ([`Graph::constant`]) or differentiable
//! variables ([`Graph::variable`]); gradients flow to inputs and parameters
//! alike, which is what the mask optimizer needs.
//!
//! ```
//! use vidsal::autodiff::Graph;
//! use vidsal::Tensor;
//!
//! let mut g = Graph::new();
//! let x = g.variable(Tensor::scalar(3.0)).unwrap();
//! let y = g.scale(x, 2.0).unwrap();
//! let grads = g.backward(y).unwrap();
//! assert_eq!(grads.get(x).unwrap().item(), 2.0);
//! ```

mod backward;
pub(crate) mod kernels;
mod ops;
#[cfg(test)]
mod tests;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub(crate) use ops::sigmoid;
pub use ops::BatchStats;

/// Handle to a node on a [`Graph`]. Only meaningful for the graph that issued it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub stride: [usize; 3],
    pub pad: [usize; 3],
}

pub(crate) enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f32),
    Offset(Var),
    ScaleBy(Var, Var),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    Abs(Var),
    Powf(Var, f32),
    Sum(Var),
    Mean(Var),
    Reshape(Var),
    Slice { x: Var, axis: usize, start: usize },
    Concat { xs: Vec<Var>, axis: usize },
    MaxPool { x: Var, argmax: Vec<u32> },
    AvgPool { x: Var, win: [usize; 3] },
    Conv3d { x: Var, w: Var, geom: ConvGeom },
    AddBias { x: Var, b: Var },
    MatMul(Var, Var),
    Softmax(Var),
    SoftmaxCrossEntropy { logits: Var, labels: Vec<usize>, probs: Vec<f32> },
    BatchNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<f32>, inv_std: Vec<f32> },
    ChannelAffine { x: Var, scale: Var, shift: Var },
    Freeze { x: Var, mask: Var },
    Dropout { x: Var, keep: Vec<f32> },
}

pub(crate) struct Node {
    pub value: Tensor,
    pub op: Op,
    pub requires_grad: bool,
}

/// The computation tape for one forward pass.
#[derive(Default)]
pub struct Graph {
    pub(crate) nodes: Vec<Node>,
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Result<Var> {
        self.leaf(value, false)
    }

    /// Leaf whose gradient is reported by [`Graph::backward`].
    pub fn variable(&mut self, value: Tensor) -> Result<Var> {
        self.leaf(value, true)
    }

    fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite { op: "leaf" });
        }
        Ok(self.push(value, Op::Leaf, requires_grad))
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub(crate) fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    pub(crate) fn data(&self, v: Var) -> &[f32] {
        self.nodes[v.0].value.data()
    }

    pub(crate) fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    pub(crate) fn ensure_finite(&self, op: &'static str, v: Var) -> Result<()> {
        if self.value(v).is_finite() {
            Ok(())
        } else {
            Err(Error::NonFinite { op })
        }
    }
}

/// Gradients produced by one backward pass, keyed by [`Var`].
///
/// Every node that requires a gradient and is reachable from the output has an
/// entry with the node's shape; anything else is absent (zero gradient).
#[derive(Clone, Debug)]
pub struct GradientStore {
    grads: Vec<Option<Tensor>>,
}

impl GradientStore {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn contains(&self, v: Var) -> bool {
        self.get(v).is_some()
    }

    /// Gradient of `v`, or zeros shaped like `like` when `v` was unreachable.
    pub fn get_or_zeros(&self, v: Var, like: &[usize]) -> Tensor {
        self.get(v).cloned().unwrap_or_else(|| Tensor::zeros(like.to_vec()))
    }
}
