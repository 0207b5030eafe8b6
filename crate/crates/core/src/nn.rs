//! Parameterized building blocks. Each layer owns [`ParamId`]s into a
//! [`ParamStore`] and records its forward pass on a [`Graph`].

use rand::Rng;

use crate::autograd::{Graph, Var};
use crate::params::{uniform, xavier_uniform, ParamId, ParamStore};
use crate::scalar::{lit, Scalar};
use crate::tensor::Tensor;

/// Normalization epsilon shared by layer and group norm.
pub const NORM_EPS: f64 = 1e-5;

/// `y = x W + b` with `W: in x out`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        rng: &mut R,
    ) -> Self {
        let weight = store.add(format!("{name}.weight"), xavier_uniform(rng, in_dim, out_dim));
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(1, out_dim));
        Self {
            weight,
            bias,
            in_dim,
            out_dim,
        }
    }

    /// A layer whose weight and bias start at zero.
    pub fn zeroed<T: Scalar>(store: &mut ParamStore<T>, name: &str, in_dim: usize, out_dim: usize) -> Self {
        let weight = store.add(format!("{name}.weight"), Tensor::zeros(in_dim, out_dim));
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(1, out_dim));
        Self {
            weight,
            bias,
            in_dim,
            out_dim,
        }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, x: Var) -> Var {
        let w = g.param(self.weight);
        let b = g.param(self.bias);
        let y = g.matmul(x, w);
        g.add_row(y, b)
    }
}

#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, dim: usize) -> Self {
        Self {
            gamma: store.add(format!("{name}.gamma"), Tensor::full(1, dim, T::one())),
            beta: store.add(format!("{name}.beta"), Tensor::zeros(1, dim)),
        }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, x: Var) -> Var {
        let gamma = g.param(self.gamma);
        let beta = g.param(self.beta);
        g.layer_norm(x, gamma, beta, lit(NORM_EPS))
    }
}

#[derive(Debug, Clone)]
pub struct GroupNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub groups: usize,
}

impl GroupNorm {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, dim: usize, groups: usize) -> Self {
        Self {
            gamma: store.add(format!("{name}.gamma"), Tensor::full(1, dim, T::one())),
            beta: store.add(format!("{name}.beta"), Tensor::zeros(1, dim)),
            groups,
        }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, x: Var) -> Var {
        let gamma = g.param(self.gamma);
        let beta = g.param(self.beta);
        g.group_norm(x, gamma, beta, self.groups, lit(NORM_EPS))
    }
}

/// Linear layers with ReLU between them (none after the last).
#[derive(Debug, Clone)]
pub struct Mlp {
    pub layers: Vec<Linear>,
}

impl Mlp {
    /// `dims = [in, hidden..., out]`.
    pub fn new<T: Scalar, R: Rng + ?Sized>(store: &mut ParamStore<T>, name: &str, dims: &[usize], rng: &mut R) -> Self {
        assert!(dims.len() >= 2);
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| Linear::new(store, &format!("{name}.{i}"), w[0], w[1], rng))
            .collect();
        Self { layers }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, x: Var) -> Var {
        let mut h = x;
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(g, h);
            if i + 1 < self.layers.len() {
                h = g.relu(h);
            }
        }
        h
    }

    pub fn last(&self) -> &Linear {
        self.layers.last().expect("non-empty mlp")
    }
}

/// `Linear -> ReLU -> Linear`, the transformer feed-forward block.
#[derive(Debug, Clone)]
pub struct FeedForward {
    pub expand: Linear,
    pub project: Linear,
}

impl FeedForward {
    pub fn new<T: Scalar, R: Rng + ?Sized>(store: &mut ParamStore<T>, name: &str, dim: usize, hidden: usize, rng: &mut R) -> Self {
        Self {
            expand: Linear::new(store, &format!("{name}.expand"), dim, hidden, rng),
            project: Linear::new(store, &format!("{name}.project"), hidden, dim, rng),
        }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, x: Var) -> Var {
        let h = self.expand.forward(g, x);
        let h = g.relu(h);
        self.project.forward(g, h)
    }
}

#[derive(Debug, Clone)]
pub struct Embedding {
    pub table: ParamId,
    pub dim: usize,
}

impl Embedding {
    pub fn new<T: Scalar, R: Rng + ?Sized>(store: &mut ParamStore<T>, name: &str, count: usize, dim: usize, rng: &mut R) -> Self {
        let bound = (3.0 / dim as f64).sqrt();
        Self {
            table: store.add(format!("{name}.table"), uniform(rng, count, dim, bound)),
            dim,
        }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, ids: Vec<usize>) -> Var {
        let t = g.param(self.table);
        g.gather_rows(t, ids)
    }
}

/// Recurrent state `(h, c)`, each `rows x hidden`.
#[derive(Debug, Clone, Copy)]
pub struct LstmState {
    pub h: Var,
    pub c: Var,
}

/// A single LSTM cell with gate order input, forget, cell, output.
#[derive(Debug, Clone)]
pub struct LstmCell {
    pub w_input: ParamId,
    pub w_hidden: ParamId,
    pub bias: ParamId,
    pub input_dim: usize,
    pub hidden: usize,
}

impl LstmCell {
    pub fn new<T: Scalar, R: Rng + ?Sized>(store: &mut ParamStore<T>, name: &str, input_dim: usize, hidden: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (hidden as f64).sqrt();
        let mut bias = Tensor::zeros(1, 4 * hidden);
        for j in hidden..2 * hidden {
            bias.set(0, j, T::one());
        }
        Self {
            w_input: store.add(format!("{name}.w_input"), uniform(rng, input_dim, 4 * hidden, bound)),
            w_hidden: store.add(format!("{name}.w_hidden"), uniform(rng, hidden, 4 * hidden, bound)),
            bias: store.add(format!("{name}.bias"), bias),
            input_dim,
            hidden,
        }
    }

    pub fn zero_state<T: Scalar>(&self, g: &mut Graph<'_, T>, rows: usize) -> LstmState {
        let h = g.constant(Tensor::zeros(rows, self.hidden));
        let c = g.constant(Tensor::zeros(rows, self.hidden));
        LstmState { h, c }
    }

    pub fn step<T: Scalar>(&self, g: &mut Graph<'_, T>, x: Var, state: LstmState) -> LstmState {
        let wi = g.param(self.w_input);
        let wh = g.param(self.w_hidden);
        let b = g.param(self.bias);
        let xi = g.matmul(x, wi);
        let hh = g.matmul(state.h, wh);
        let z = g.add(xi, hh);
        let z = g.add_row(z, b);
        let n = self.hidden;
        let i = g.slice_cols(z, 0, n);
        let f = g.slice_cols(z, n, n);
        let c_in = g.slice_cols(z, 2 * n, n);
        let o = g.slice_cols(z, 3 * n, n);
        let i = g.sigmoid(i);
        let f = g.sigmoid(f);
        let c_in = g.tanh(c_in);
        let o = g.sigmoid(o);
        let keep = g.mul(f, state.c);
        let write = g.mul(i, c_in);
        let c = g.add(keep, write);
        let tc = g.tanh(c);
        let h = g.mul(o, tc);
        LstmState { h, c }
    }
}
