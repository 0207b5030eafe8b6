//! Multi-scale deformable attention and standard dense multi-head attention.

use std::f64::consts::PI;
use std::sync::Arc;

use rand::Rng;

use crate::autograd::{Graph, LevelLayout, Var};
use crate::nn::Linear;
use crate::params::ParamStore;
use crate::scalar::{lit, Scalar};
use crate::tensor::Tensor;

/// Where each query samples from.
#[derive(Debug, Clone, Copy)]
pub enum Reference {
    /// One normalized point per query (`Q x 1`); learned offsets around it.
    Point(Var),
    /// Center and length per query (`Q x 1` each); the sampling keys are
    /// fixed and evenly spaced over `[center - length/2, center + length/2]`.
    Span { center: Var, length: Var },
}

impl Reference {
    pub fn center(&self) -> Var {
        match *self {
            Reference::Point(c) => c,
            Reference::Span { center, .. } => center,
        }
    }
}

/// Intermediate tensors of one deformable attention call, kept for tests
/// and inspection.
#[derive(Debug, Clone, Copy)]
pub struct DeformableOutput {
    pub output: Var,
    /// Softmax-normalized weights, `Q x (H*L*K)`.
    pub weights: Var,
    /// Normalized sampling positions, `Q x (H*L*K)`.
    pub positions: Var,
}

#[derive(Debug, Clone)]
pub struct DeformableAttention {
    pub offsets: Linear,
    pub attn: Linear,
    pub value_proj: Linear,
    pub out_proj: Linear,
    pub heads: usize,
    pub levels: usize,
    pub points: usize,
}

impl DeformableAttention {
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        d_model: usize,
        heads: usize,
        levels: usize,
        points: usize,
        rng: &mut R,
    ) -> Self {
        let n = heads * levels * points;
        let offsets = Linear::zeroed(store, &format!("{name}.offsets"), d_model, n);
        // Heads start looking in different directions at growing distances.
        let bias = store.get_mut(offsets.bias);
        for h in 0..heads {
            let theta = 2.0 * PI * h as f64 / heads as f64;
            let dir = theta.cos() / theta.cos().abs().max(theta.sin().abs());
            for l in 0..levels {
                for k in 0..points {
                    bias.set(0, (h * levels + l) * points + k, lit(dir * (k + 1) as f64));
                }
            }
        }
        Self {
            offsets,
            attn: Linear::zeroed(store, &format!("{name}.attn"), d_model, n),
            value_proj: Linear::new(store, &format!("{name}.value_proj"), d_model, d_model, rng),
            out_proj: Linear::new(store, &format!("{name}.out_proj"), d_model, d_model, rng),
            heads,
            levels,
            points,
        }
    }

    pub fn num_samples(&self) -> usize {
        self.heads * self.levels * self.points
    }

    /// `query: Q x D`, `memory: (sum T_l) x D`.
    pub fn forward<T: Scalar>(
        &self,
        g: &mut Graph<'_, T>,
        query: Var,
        reference: Reference,
        memory: Var,
        layout: &Arc<LevelLayout>,
    ) -> DeformableOutput {
        assert_eq!(layout.num_levels(), self.levels, "level count mismatch");
        let n = self.num_samples();
        let logits = self.attn.forward(g, query);
        let weights = g.softmax_groups(logits, self.levels * self.points);
        let ones = g.constant(Tensor::full(1, n, T::one()));
        let positions = match reference {
            Reference::Point(refs) => {
                // Offsets are in frames of their level.
                let inv_len: Vec<T> = (0..n)
                    .map(|j| {
                        let l = (j / self.points) % self.levels;
                        T::one() / T::from_usize_lossy(layout.length(l))
                    })
                    .collect();
                let off = self.offsets.forward(g, query);
                let off = g.scale_cols(off, Arc::new(inv_len));
                let base = g.matmul(refs, ones);
                g.add(base, off)
            }
            Reference::Span { center, length } => {
                let fracs: Vec<T> = (0..n).map(|j| span_fraction(j % self.points, self.points)).collect();
                let fracs = g.constant(Tensor::row_vector(fracs));
                let base = g.matmul(center, ones);
                let spread = g.matmul(length, fracs);
                g.add(base, spread)
            }
        };
        let value = self.value_proj.forward(g, memory);
        let sampled = g.deform_sample(value, positions, weights, layout.clone(), self.heads, self.points);
        let output = self.out_proj.forward(g, sampled);
        DeformableOutput {
            output,
            weights,
            positions,
        }
    }
}

/// Position of key `k` of `points` evenly spaced keys, relative to the span
/// center in units of span length: `-0.5 ..= 0.5`.
pub fn span_fraction<T: Scalar>(k: usize, points: usize) -> T {
    if points <= 1 {
        return T::zero();
    }
    lit(k as f64 / (points - 1) as f64 - 0.5)
}

/// Scaled dot-product attention with `heads` heads.
#[derive(Debug, Clone)]
pub struct MultiHeadAttention {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
    pub heads: usize,
}

impl MultiHeadAttention {
    pub fn new<T: Scalar, R: Rng + ?Sized>(store: &mut ParamStore<T>, name: &str, d_model: usize, heads: usize, rng: &mut R) -> Self {
        Self {
            q: Linear::new(store, &format!("{name}.q"), d_model, d_model, rng),
            k: Linear::new(store, &format!("{name}.k"), d_model, d_model, rng),
            v: Linear::new(store, &format!("{name}.v"), d_model, d_model, rng),
            o: Linear::new(store, &format!("{name}.o"), d_model, d_model, rng),
            heads,
        }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, query: Var, key: Var, value: Var) -> Var {
        let d = g.shape(query).1;
        let dh = d / self.heads;
        let q = self.q.forward(g, query);
        let k = self.k.forward(g, key);
        let v = self.v.forward(g, value);
        let scale = T::one() / T::from_usize_lossy(dh).sqrt();
        let mut outs = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let qh = g.slice_cols(q, h * dh, dh);
            let kh = g.slice_cols(k, h * dh, dh);
            let vh = g.slice_cols(v, h * dh, dh);
            let kt = g.transpose(kh);
            let s = g.matmul(qh, kt);
            let s = g.scale(s, scale);
            let a = g.softmax_rows(s);
            outs.push(g.matmul(a, vh));
        }
        let cat = if outs.len() == 1 { outs[0] } else { g.concat_cols(&outs) };
        self.o.forward(g, cat)
    }
}
