//! Forward definitions of every recorded operation.

use std::sync::Arc;

use super::sampling::{deform_sample_forward, gather_samples_forward, LevelLayout};
use super::{Graph, Op, Var};
use crate::geometry::{giou_unchecked, Segment};
use crate::scalar::{lit, Scalar};
use crate::tensor::{dot, gemm_nn, Tensor};

fn unary<T: Scalar>(x: &Tensor<T>, f: impl Fn(T) -> T) -> Tensor<T> {
    x.map(f)
}

fn binary<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, f: impl Fn(T, T) -> T) -> Tensor<T> {
    assert_eq!(a.shape(), b.shape(), "elementwise shape mismatch");
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::from_vec(a.rows(), a.cols(), data)
}

#[inline]
pub(crate) fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// Focal loss of a sigmoid probability and its derivative w.r.t. the logit.
pub(crate) fn focal_with_grad<T: Scalar>(logit: T, target: bool, alpha: T, gamma: T) -> (T, T) {
    let eps = lit::<T>(1e-8);
    let one = T::one();
    let p = sigmoid(logit).max(eps).min(one - eps);
    if target {
        let q = one - p;
        let loss = -alpha * q.powf(gamma) * p.ln();
        // d/dx of -a q^g ln p with dp/dx = p q
        let grad = -alpha * (q.powf(gamma + one) - gamma * q.powf(gamma) * p * p.ln());
        (loss, grad)
    } else {
        let a = one - alpha;
        let q = one - p;
        let loss = -a * p.powf(gamma) * q.ln();
        let grad = -a * (gamma * p.powf(gamma) * q * q.ln() - p.powf(gamma + one));
        (loss, grad)
    }
}

fn normalize_rows<T: Scalar>(x: &Tensor<T>, eps: T) -> (Tensor<T>, Vec<T>) {
    let (rows, cols) = x.shape();
    let n = T::from_usize_lossy(cols);
    let mut xhat = Tensor::zeros(rows, cols);
    let mut rstd = Vec::with_capacity(rows);
    for r in 0..rows {
        let row = x.row(r);
        let mean = row.iter().copied().sum::<T>() / n;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
        let s = T::one() / (var + eps).sqrt();
        for (o, &v) in xhat.row_mut(r).iter_mut().zip(row) {
            *o = (v - mean) * s;
        }
        rstd.push(s);
    }
    (xhat, rstd)
}

fn normalize_groups<T: Scalar>(x: &Tensor<T>, groups: usize, eps: T) -> (Tensor<T>, Vec<T>) {
    let (rows, cols) = x.shape();
    let width = cols / groups;
    let n = T::from_usize_lossy(rows * width);
    let mut xhat = Tensor::zeros(rows, cols);
    let mut rstd = Vec::with_capacity(groups);
    for gi in 0..groups {
        let cs = gi * width;
        let mut mean = T::zero();
        for r in 0..rows {
            mean += x.row(r)[cs..cs + width].iter().copied().sum::<T>();
        }
        mean /= n;
        let mut var = T::zero();
        for r in 0..rows {
            var += x.row(r)[cs..cs + width]
                .iter()
                .map(|&v| (v - mean) * (v - mean))
                .sum::<T>();
        }
        var /= n;
        let s = T::one() / (var + eps).sqrt();
        for r in 0..rows {
            let src = &x.row(r)[cs..cs + width];
            for (o, &v) in xhat.row_mut(r)[cs..cs + width].iter_mut().zip(src) {
                *o = (v - mean) * s;
            }
        }
        rstd.push(s);
    }
    (xhat, rstd)
}

fn affine_rows<T: Scalar>(xhat: &Tensor<T>, gamma: &Tensor<T>, beta: &Tensor<T>) -> Tensor<T> {
    let mut out = xhat.clone();
    let g = gamma.data();
    let b = beta.data();
    for r in 0..out.rows() {
        for ((o, &gv), &bv) in out.row_mut(r).iter_mut().zip(g).zip(b) {
            *o = *o * gv + bv;
        }
    }
    out
}

impl<T: Scalar> Graph<'_, T> {
    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (m, k) = self.shape(a);
        let (k2, n) = self.shape(b);
        assert_eq!(k, k2, "matmul {m}x{k} by {k2}x{n}");
        let mut out = Tensor::zeros(m, n);
        gemm_nn(m, k, n, self.value(a).data(), self.value(b).data(), out.data_mut());
        let ng = self.needs(a) || self.needs(b);
        self.push(out, Op::MatMul(a, b), ng)
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let out = self.value(a).transpose();
        let ng = self.needs(a);
        self.push(out, Op::Transpose(a), ng)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let out = binary(self.value(a), self.value(b), |x, y| x + y);
        let ng = self.needs(a) || self.needs(b);
        self.push(out, Op::Add(a, b), ng)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let out = binary(self.value(a), self.value(b), |x, y| x - y);
        let ng = self.needs(a) || self.needs(b);
        self.push(out, Op::Sub(a, b), ng)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let out = binary(self.value(a), self.value(b), |x, y| x * y);
        let ng = self.needs(a) || self.needs(b);
        self.push(out, Op::Mul(a, b), ng)
    }

    /// `a + row` with `row: 1 x n` broadcast over every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let (m, n) = self.shape(a);
        assert_eq!(self.shape(row), (1, n), "add_row expects a 1x{n} row");
        let mut out = self.value(a).clone();
        let r = self.value(row).data().to_vec();
        for i in 0..m {
            for (o, &v) in out.row_mut(i).iter_mut().zip(&r) {
                *o += v;
            }
        }
        let ng = self.needs(a) || self.needs(row);
        self.push(out, Op::AddRow(a, row), ng)
    }

    /// `a + col` with `col: m x 1` broadcast over every column of `a`.
    pub fn add_col(&mut self, a: Var, col: Var) -> Var {
        let (m, _) = self.shape(a);
        assert_eq!(self.shape(col), (m, 1), "add_col expects a {m}x1 column");
        let mut out = self.value(a).clone();
        let c = self.value(col).data().to_vec();
        for (i, &cv) in c.iter().enumerate() {
            for o in out.row_mut(i) {
                *o += cv;
            }
        }
        let ng = self.needs(a) || self.needs(col);
        self.push(out, Op::AddCol(a, col), ng)
    }

    /// Row `i` of `a` scaled by `col[i]`.
    pub fn mul_col(&mut self, a: Var, col: Var) -> Var {
        let (m, _) = self.shape(a);
        assert_eq!(self.shape(col), (m, 1), "mul_col expects a {m}x1 column");
        let mut out = self.value(a).clone();
        let c = self.value(col).data().to_vec();
        for (i, &cv) in c.iter().enumerate() {
            for o in out.row_mut(i) {
                *o *= cv;
            }
        }
        let ng = self.needs(a) || self.needs(col);
        self.push(out, Op::MulCol(a, col), ng)
    }

    pub fn scale(&mut self, a: Var, s: T) -> Var {
        let out = unary(self.value(a), |x| x * s);
        let ng = self.needs(a);
        self.push(out, Op::Scale(a, s), ng)
    }

    pub fn add_scalar(&mut self, a: Var, s: T) -> Var {
        let out = unary(self.value(a), |x| x + s);
        let ng = self.needs(a);
        self.push(out, Op::AddScalar(a), ng)
    }

    /// Column `j` of `a` multiplied by the constant `factors[j]`.
    pub fn scale_cols(&mut self, a: Var, factors: Arc<Vec<T>>) -> Var {
        let (m, n) = self.shape(a);
        assert_eq!(factors.len(), n, "scale_cols factor count");
        let mut out = self.value(a).clone();
        for i in 0..m {
            for (o, &f) in out.row_mut(i).iter_mut().zip(factors.iter()) {
                *o *= f;
            }
        }
        let ng = self.needs(a);
        self.push(out, Op::ScaleCols(a, factors), ng)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = unary(self.value(a), sigmoid);
        let ng = self.needs(a);
        self.push(out, Op::Sigmoid(a), ng)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = unary(self.value(a), T::tanh);
        let ng = self.needs(a);
        self.push(out, Op::Tanh(a), ng)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = unary(self.value(a), |x| x.max(T::zero()));
        let ng = self.needs(a);
        self.push(out, Op::Relu(a), ng)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let out = unary(self.value(a), T::exp);
        let ng = self.needs(a);
        self.push(out, Op::Exp(a), ng)
    }

    /// `ln(max(x, eps))`.
    pub fn log(&mut self, a: Var, eps: T) -> Var {
        let out = unary(self.value(a), |x| x.max(eps).ln());
        let ng = self.needs(a);
        self.push(out, Op::Log(a, eps), ng)
    }

    /// `ln(x / (1 - x))` with `x` clamped into `[eps, 1 - eps]`.
    pub fn inverse_sigmoid(&mut self, a: Var, eps: T) -> Var {
        let hi = T::one() - eps;
        let out = unary(self.value(a), |x| {
            let x = x.max(eps).min(hi);
            (x / (T::one() - x)).ln()
        });
        let ng = self.needs(a);
        self.push(out, Op::InvSigmoid(a, eps), ng)
    }

    pub fn clamp(&mut self, a: Var, lo: T, hi: T) -> Var {
        let out = unary(self.value(a), |x| x.max(lo).min(hi));
        let ng = self.needs(a);
        self.push(out, Op::Clamp(a, lo, hi), ng)
    }

    pub fn minimum(&mut self, a: Var, b: Var) -> Var {
        let out = binary(self.value(a), self.value(b), |x, y| if y < x { y } else { x });
        let ng = self.needs(a) || self.needs(b);
        self.push(out, Op::Minimum(a, b), ng)
    }

    pub fn maximum(&mut self, a: Var, b: Var) -> Var {
        let out = binary(self.value(a), self.value(b), |x, y| if y > x { y } else { x });
        let ng = self.needs(a) || self.needs(b);
        self.push(out, Op::Maximum(a, b), ng)
    }

    /// Softmax over consecutive runs of `group` columns in every row.
    pub fn softmax_groups(&mut self, a: Var, group: usize) -> Var {
        let (m, n) = self.shape(a);
        assert!(group > 0 && n % group == 0, "softmax group {group} must divide {n}");
        let mut out = self.value(a).clone();
        for i in 0..m {
            for chunk in out.row_mut(i).chunks_mut(group) {
                let mx = chunk.iter().copied().fold(T::neg_infinity(), T::max);
                let mut s = T::zero();
                for v in chunk.iter_mut() {
                    *v = (*v - mx).exp();
                    s += *v;
                }
                for v in chunk.iter_mut() {
                    *v /= s;
                }
            }
        }
        let ng = self.needs(a);
        self.push(out, Op::SoftmaxGroups(a, group), ng)
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let n = self.shape(a).1;
        self.softmax_groups(a, n)
    }

    pub fn log_softmax_rows(&mut self, a: Var) -> Var {
        let (m, _) = self.shape(a);
        let mut out = self.value(a).clone();
        for i in 0..m {
            let row = out.row_mut(i);
            let mx = row.iter().copied().fold(T::neg_infinity(), T::max);
            let lse = mx + row.iter().map(|&v| (v - mx).exp()).sum::<T>().ln();
            for v in row.iter_mut() {
                *v -= lse;
            }
        }
        let ng = self.needs(a);
        self.push(out, Op::LogSoftmaxRows(a), ng)
    }

    /// `out[i] = a[i, idx[i]]`, an `m x 1` column.
    pub fn pick_cols(&mut self, a: Var, idx: Vec<usize>) -> Var {
        let (m, n) = self.shape(a);
        assert_eq!(idx.len(), m, "pick_cols needs one index per row");
        let data = idx
            .iter()
            .enumerate()
            .map(|(i, &j)| {
                assert!(j < n, "pick index {j} out of {n} columns");
                self.value(a).get(i, j)
            })
            .collect();
        let ng = self.needs(a);
        self.push(Tensor::column(data), Op::PickCols(a, idx), ng)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).sum();
        let ng = self.needs(a);
        self.push(Tensor::scalar(s), Op::SumAll(a), ng)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).len().max(1);
        let s = self.sum(a);
        self.scale(s, T::one() / T::from_usize_lossy(n))
    }

    /// Row sums as an `m x 1` column.
    pub fn sum_cols(&mut self, a: Var) -> Var {
        let (m, _) = self.shape(a);
        let data = (0..m).map(|i| self.value(a).row(i).iter().copied().sum()).collect();
        let ng = self.needs(a);
        self.push(Tensor::column(data), Op::SumCols(a), ng)
    }

    /// Row-wise layer normalization with `1 x n` gain and bias.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: T) -> Var {
        let (xhat, rstd) = normalize_rows(self.value(x), eps);
        let out = affine_rows(&xhat, self.value(gamma), self.value(beta));
        let ng = self.needs(x) || self.needs(gamma) || self.needs(beta);
        self.push(
            out,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            },
            ng,
        )
    }

    /// Group normalization of a `T x C` sequence: statistics over all rows
    /// and the `C / groups` channels of each group.
    pub fn group_norm(&mut self, x: Var, gamma: Var, beta: Var, groups: usize, eps: T) -> Var {
        let cols = self.shape(x).1;
        assert!(groups > 0 && cols.is_multiple_of(groups), "groups must divide channels");
        let (xhat, rstd) = normalize_groups(self.value(x), groups, eps);
        let out = affine_rows(&xhat, self.value(gamma), self.value(beta));
        let ng = self.needs(x) || self.needs(gamma) || self.needs(beta);
        self.push(
            out,
            Op::GroupNorm {
                x,
                gamma,
                beta,
                groups,
                xhat,
                rstd,
            },
            ng,
        )
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let m = self.shape(parts[0]).0;
        let n: usize = parts.iter().map(|&p| self.shape(p).1).sum();
        let mut out = Tensor::zeros(m, n);
        for i in 0..m {
            let mut c = 0;
            for &p in parts {
                let v = self.value(p);
                assert_eq!(v.rows(), m, "concat_cols row mismatch");
                let w = v.cols();
                out.row_mut(i)[c..c + w].copy_from_slice(v.row(i));
                c += w;
            }
        }
        let ng = parts.iter().any(|&p| self.needs(p));
        self.push(out, Op::ConcatCols(parts.to_vec()), ng)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let n = self.shape(parts[0]).1;
        let mut data = Vec::new();
        let mut m = 0;
        for &p in parts {
            let v = self.value(p);
            assert_eq!(v.cols(), n, "concat_rows column mismatch");
            data.extend_from_slice(v.data());
            m += v.rows();
        }
        let ng = parts.iter().any(|&p| self.needs(p));
        self.push(Tensor::from_vec(m, n, data), Op::ConcatRows(parts.to_vec()), ng)
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Var {
        let (m, n) = self.shape(a);
        assert!(start + len <= m, "slice_rows out of range");
        let v = self.value(a);
        let data = v.data()[start * n..(start + len) * n].to_vec();
        let ng = self.needs(a);
        self.push(Tensor::from_vec(len, n, data), Op::SliceRows(a, start), ng)
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let (m, n) = self.shape(a);
        assert!(start + len <= n, "slice_cols out of range");
        let mut out = Tensor::zeros(m, len);
        for i in 0..m {
            out.row_mut(i).copy_from_slice(&self.value(a).row(i)[start..start + len]);
        }
        let ng = self.needs(a);
        self.push(out, Op::SliceCols(a, start), ng)
    }

    /// `out[i] = a[idx[i]]`; indices may repeat (embedding lookup).
    pub fn gather_rows(&mut self, a: Var, idx: Vec<usize>) -> Var {
        let (m, n) = self.shape(a);
        let mut out = Tensor::zeros(idx.len(), n);
        for (i, &r) in idx.iter().enumerate() {
            assert!(r < m, "gather index {r} out of {m} rows");
            out.row_mut(i).copy_from_slice(self.value(a).row(r));
        }
        let ng = self.needs(a);
        self.push(out, Op::GatherRows(a, idx), ng)
    }

    /// im2col for a 1-D convolution: row `t` holds the `kernel` input rows
    /// starting at `t * stride - pad`, zero outside the sequence.
    pub fn unfold1d(&mut self, x: Var, kernel: usize, stride: usize, pad: usize) -> Var {
        let (len, c) = self.shape(x);
        assert!(len + 2 * pad >= kernel, "sequence shorter than kernel");
        let out_len = (len + 2 * pad - kernel) / stride + 1;
        let mut out = Tensor::zeros(out_len, kernel * c);
        for t in 0..out_len {
            for j in 0..kernel {
                let src = (t * stride + j) as isize - pad as isize;
                if src >= 0 && (src as usize) < len {
                    let row = self.value(x).row(src as usize);
                    out.row_mut(t)[j * c..(j + 1) * c].copy_from_slice(row);
                }
            }
        }
        let ng = self.needs(x);
        self.push(
            out,
            Op::Unfold1d {
                x,
                kernel,
                stride,
                pad,
            },
            ng,
        )
    }

    /// Column-wise maximum over rows (max pooling across a set).
    pub fn max_rows(&mut self, a: Var) -> Var {
        let (m, n) = self.shape(a);
        assert!(m > 0, "max_rows of an empty set");
        let v = self.value(a);
        let mut arg = vec![0usize; n];
        let mut out = v.row(0).to_vec();
        for i in 1..m {
            for (j, &x) in v.row(i).iter().enumerate() {
                if x > out[j] {
                    out[j] = x;
                    arg[j] = i;
                }
            }
        }
        let ng = self.needs(a);
        self.push(Tensor::row_vector(out), Op::MaxRows(a, arg), ng)
    }

    /// Multi-scale deformable sampling: for every query and head, the
    /// `weights`-weighted sum of `value` linearly interpolated at normalized
    /// positions `pos` on each level.
    pub fn deform_sample(
        &mut self,
        value: Var,
        pos: Var,
        weights: Var,
        layout: Arc<LevelLayout>,
        heads: usize,
        points: usize,
    ) -> Var {
        let (rows, d) = self.shape(value);
        assert_eq!(rows, layout.total(), "value rows must match the level layout");
        assert!(heads > 0 && d % heads == 0, "heads must divide width");
        let n = heads * layout.num_levels() * points;
        assert_eq!(self.shape(pos).1, n, "pos must have H*L*K columns");
        assert_eq!(self.shape(pos), self.shape(weights), "pos/weights shape");
        let out = deform_sample_forward(
            self.value(value),
            self.value(pos),
            self.value(weights),
            &layout,
            heads,
            points,
        );
        let ng = self.needs(value) || self.needs(pos) || self.needs(weights);
        self.push(
            out,
            Op::DeformSample {
                value,
                pos,
                weights,
                layout,
                heads,
                points,
            },
            ng,
        )
    }

    /// Samples `value` at each of the `L*K` positions of every row of `pos`
    /// (`points` consecutive columns per level) and lays the sampled vectors
    /// side by side: output is `G x (L*K*C)`.
    pub fn gather_samples(&mut self, value: Var, pos: Var, layout: Arc<LevelLayout>, points: usize) -> Var {
        assert_eq!(self.shape(value).0, layout.total(), "value rows must match the level layout");
        assert_eq!(self.shape(pos).1, layout.num_levels() * points, "pos must have L*K columns");
        let out = gather_samples_forward(self.value(value), self.value(pos), &layout, points);
        let ng = self.needs(value) || self.needs(pos);
        self.push(
            out,
            Op::GatherSamples {
                value,
                pos,
                layout,
                points,
            },
            ng,
        )
    }

    /// `out[g, j] = <blocks[g, j*C..(j+1)*C], q[g]>` for `blocks: G x nC`, `q: G x C`.
    pub fn block_dot(&mut self, blocks: Var, q: Var) -> Var {
        let (g, nc) = self.shape(blocks);
        let (g2, c) = self.shape(q);
        assert_eq!(g, g2);
        assert!(c > 0 && nc % c == 0);
        let n = nc / c;
        let mut out = Tensor::zeros(g, n);
        for i in 0..g {
            let qrow = self.value(q).row(i);
            let brow = self.value(blocks).row(i);
            for j in 0..n {
                out.set(i, j, dot(&brow[j * c..(j + 1) * c], qrow));
            }
        }
        let ng = self.needs(blocks) || self.needs(q);
        self.push(out, Op::BlockDot(blocks, q), ng)
    }

    /// `out[g] = sum_j w[g, j] * blocks[g, j*C..(j+1)*C]`.
    pub fn block_weighted_sum(&mut self, w: Var, blocks: Var) -> Var {
        let (g, n) = self.shape(w);
        let (g2, nc) = self.shape(blocks);
        assert_eq!(g, g2);
        assert!(n > 0 && nc % n == 0);
        let c = nc / n;
        let mut out = Tensor::zeros(g, c);
        for i in 0..g {
            let wrow = self.value(w).row(i).to_vec();
            let brow = self.value(blocks).row(i).to_vec();
            let orow = out.row_mut(i);
            for (j, &wj) in wrow.iter().enumerate() {
                for (o, &b) in orow.iter_mut().zip(&brow[j * c..(j + 1) * c]) {
                    *o += wj * b;
                }
            }
        }
        let ng = self.needs(w) || self.needs(blocks);
        self.push(out, Op::BlockWeightedSum(w, blocks), ng)
    }

    /// Per-row focal loss of `sigmoid(logits)` against binary targets.
    pub fn sigmoid_focal(&mut self, logits: Var, targets: Vec<bool>, alpha: T, gamma: T) -> Var {
        let (m, n) = self.shape(logits);
        assert_eq!(n, 1, "sigmoid_focal expects an m x 1 column");
        assert_eq!(targets.len(), m);
        let data = targets
            .iter()
            .enumerate()
            .map(|(i, &t)| focal_with_grad(self.value(logits).get(i, 0), t, alpha, gamma).0)
            .collect();
        let ng = self.needs(logits);
        self.push(
            Tensor::column(data),
            Op::SigmoidFocal {
                logits,
                targets,
                alpha,
                gamma,
            },
            ng,
        )
    }

    /// Per-row gIOU between predicted `[start, end]` columns and fixed targets.
    pub fn giou(&mut self, start: Var, end: Var, targets: Vec<Segment<T>>) -> Var {
        let m = self.shape(start).0;
        assert_eq!(self.shape(start), (m, 1));
        assert_eq!(self.shape(end), (m, 1));
        assert_eq!(targets.len(), m);
        let data = targets
            .iter()
            .enumerate()
            .map(|(i, tgt)| {
                let s = self.value(start).get(i, 0);
                let e = self.value(end).get(i, 0);
                let pred = Segment {
                    start: s.min(e),
                    end: e.max(s),
                };
                giou_unchecked(&pred, tgt)
            })
            .collect();
        let ng = self.needs(start) || self.needs(end);
        self.push(Tensor::column(data), Op::Giou { start, end, targets }, ng)
    }
}
