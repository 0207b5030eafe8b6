//! Reverse-mode automatic differentiation over 2-D tensors.
//!
//! A [`Graph`] records every operation of one forward pass as a node on a
//! tape. [`Graph::backward`] walks the tape in reverse and returns gradients
//! for every parameter and every [`Graph::input`] leaf. Graphs are cheap and
//! single-use: build one per video per step.

mod backward;
mod ops;
mod sampling;

use std::sync::Arc;

pub use backward::Backward;
pub use sampling::{locate, LevelLayout, SampleLoc};

use crate::geometry::Segment;
use crate::params::{ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

pub(crate) struct Node<T> {
    pub(crate) value: Tensor<T>,
    pub(crate) op: Op<T>,
    pub(crate) needs_grad: bool,
}

pub(crate) enum Op<T> {
    Constant,
    Input,
    Param(ParamId),
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    AddCol(Var, Var),
    MulCol(Var, Var),
    Scale(Var, T),
    AddScalar(Var),
    ScaleCols(Var, Arc<Vec<T>>),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    Exp(Var),
    Log(Var, T),
    InvSigmoid(Var, T),
    Clamp(Var, T, T),
    Minimum(Var, Var),
    Maximum(Var, Var),
    SoftmaxGroups(Var, usize),
    LogSoftmaxRows(Var),
    PickCols(Var, Vec<usize>),
    SumAll(Var),
    SumCols(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Tensor<T>,
        rstd: Vec<T>,
    },
    GroupNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        groups: usize,
        xhat: Tensor<T>,
        rstd: Vec<T>,
    },
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceRows(Var, usize),
    SliceCols(Var, usize),
    GatherRows(Var, Vec<usize>),
    Unfold1d {
        x: Var,
        kernel: usize,
        stride: usize,
        pad: usize,
    },
    MaxRows(Var, Vec<usize>),
    DeformSample {
        value: Var,
        pos: Var,
        weights: Var,
        layout: Arc<LevelLayout>,
        heads: usize,
        points: usize,
    },
    GatherSamples {
        value: Var,
        pos: Var,
        layout: Arc<LevelLayout>,
        points: usize,
    },
    BlockDot(Var, Var),
    BlockWeightedSum(Var, Var),
    SigmoidFocal {
        logits: Var,
        targets: Vec<bool>,
        alpha: T,
        gamma: T,
    },
    Giou {
        start: Var,
        end: Var,
        targets: Vec<Segment<T>>,
    },
}

/// One forward pass worth of recorded operations.
pub struct Graph<'p, T: Scalar> {
    params: &'p ParamStore<T>,
    pub(crate) nodes: Vec<Node<T>>,
    param_vars: Vec<Option<Var>>,
    record: bool,
}

impl<'p, T: Scalar> Graph<'p, T> {
    /// A graph that records operations for [`Graph::backward`].
    pub fn new(params: &'p ParamStore<T>) -> Self {
        Self {
            params,
            nodes: Vec::new(),
            param_vars: vec![None; params.len()],
            record: true,
        }
    }

    /// A graph for inference; nothing requires a gradient.
    pub fn inference(params: &'p ParamStore<T>) -> Self {
        Self {
            record: false,
            ..Self::new(params)
        }
    }

    pub fn params(&self) -> &'p ParamStore<T> {
        self.params
    }

    pub fn is_recording(&self) -> bool {
        self.record
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub(crate) fn push(&mut self, value: Tensor<T>, op: Op<T>, needs_grad: bool) -> Var {
        let needs_grad = needs_grad && self.record;
        let op = if needs_grad { op } else { Op::Constant };
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    #[inline]
    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    #[inline]
    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    /// Value of a `1 x 1` node.
    pub fn item(&self, v: Var) -> T {
        self.value(v).item()
    }

    #[inline]
    pub(crate) fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Constant, false)
    }

    /// Leaf whose gradient is reported by [`Backward::wrt`].
    pub fn input(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Input, true)
    }

    /// A parameter leaf; repeated calls return the same node.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_vars[id.0] {
            return v;
        }
        let value = self.params.get(id).clone();
        let v = self.push(value, Op::Param(id), true);
        self.param_vars[id.0] = Some(v);
        v
    }

    /// Copy of `v` that blocks gradient flow.
    pub fn detach(&mut self, v: Var) -> Var {
        let t = self.value(v).clone();
        self.constant(t)
    }

    pub fn backward(&self, loss: Var) -> Backward<T> {
        backward::run(self, loss)
    }
}

/// Numerically stable logistic function on a plain value.
pub fn sigmoid_value<T: Scalar>(x: T) -> T {
    ops::sigmoid(x)
}
