//! Reverse sweep over the tape.

use std::collections::HashMap;

use super::ops::focal_with_grad;
use super::sampling::locate;
use super::{Graph, Op, Var};
use crate::geometry::{giou_with_grad, Segment};
use crate::params::{Gradients, ParamId};
use crate::scalar::Scalar;
use crate::tensor::{dot, gemm_nt, gemm_tn, Tensor};

/// Result of [`Graph::backward`].
pub struct Backward<T> {
    params: Gradients<T>,
    inputs: HashMap<usize, Tensor<T>>,
}

impl<T: Scalar> Backward<T> {
    pub fn params(&self) -> &Gradients<T> {
        &self.params
    }

    pub fn into_params(self) -> Gradients<T> {
        self.params
    }

    /// Gradient of an [`Graph::input`] leaf; `None` if the loss does not
    /// depend on it.
    pub fn wrt(&self, v: Var) -> Option<&Tensor<T>> {
        self.inputs.get(&v.0)
    }

    pub fn param(&self, id: ParamId) -> &Tensor<T> {
        self.params.get(id)
    }
}

struct Acc<'a, 'p, T: Scalar> {
    graph: &'a Graph<'p, T>,
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Acc<'_, '_, T> {
    /// Adds `g` into the gradient slot of `v` when `v` needs one.
    fn add(&mut self, v: Var, g: Tensor<T>) {
        if !self.graph.needs(v) {
            return;
        }
        match &mut self.grads[v.0] {
            Some(existing) => existing.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    /// Mutable gradient slot of `v`, zero-initialized.
    fn slot(&mut self, v: Var) -> Option<&mut Tensor<T>> {
        if !self.graph.needs(v) {
            return None;
        }
        let (r, c) = self.graph.shape(v);
        Some(self.grads[v.0].get_or_insert_with(|| Tensor::zeros(r, c)))
    }

    fn val(&self, v: Var) -> &Tensor<T> {
        self.graph.value(v)
    }
}

fn zip_map<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, f: impl Fn(T, T) -> T) -> Tensor<T> {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::from_vec(a.rows(), a.cols(), data)
}

pub(super) fn run<T: Scalar>(graph: &Graph<'_, T>, loss: Var) -> Backward<T> {
    assert_eq!(graph.shape(loss), (1, 1), "backward expects a scalar loss");
    let mut acc = Acc {
        graph,
        grads: (0..graph.nodes.len()).map(|_| None).collect(),
    };
    if graph.needs(loss) {
        acc.grads[loss.0] = Some(Tensor::scalar(T::one()));
    }
    let mut params = Gradients::zeros_like(graph.params());
    let mut inputs = HashMap::new();

    for idx in (0..=loss.0).rev() {
        let Some(g) = acc.grads[idx].take() else {
            continue;
        };
        let node = &graph.nodes[idx];
        let y = &node.value;
        match &node.op {
            Op::Constant => {}
            Op::Input => {
                inputs.insert(idx, g);
            }
            Op::Param(id) => params.get_mut(*id).add_assign(&g),
            Op::MatMul(a, b) => {
                let (m, k) = graph.shape(*a);
                let n = graph.shape(*b).1;
                if graph.needs(*a) {
                    let mut ga = Tensor::zeros(m, k);
                    gemm_nt(m, n, k, g.data(), acc.val(*b).data(), ga.data_mut());
                    acc.add(*a, ga);
                }
                if graph.needs(*b) {
                    let mut gb = Tensor::zeros(k, n);
                    gemm_tn(k, m, n, acc.val(*a).data(), g.data(), gb.data_mut());
                    acc.add(*b, gb);
                }
            }
            Op::Transpose(a) => acc.add(*a, g.transpose()),
            Op::Add(a, b) => {
                acc.add(*b, g.clone());
                acc.add(*a, g);
            }
            Op::Sub(a, b) => {
                acc.add(*b, g.map(|x| -x));
                acc.add(*a, g);
            }
            Op::Mul(a, b) => {
                let ga = zip_map(&g, acc.val(*b), |x, y| x * y);
                let gb = zip_map(&g, acc.val(*a), |x, y| x * y);
                acc.add(*a, ga);
                acc.add(*b, gb);
            }
            Op::AddRow(a, row) => {
                if let Some(gr) = acc.slot(*row) {
                    for i in 0..g.rows() {
                        for (o, &v) in gr.data_mut().iter_mut().zip(g.row(i)) {
                            *o += v;
                        }
                    }
                }
                acc.add(*a, g);
            }
            Op::AddCol(a, col) => {
                if let Some(gc) = acc.slot(*col) {
                    for i in 0..g.rows() {
                        gc.data_mut()[i] += g.row(i).iter().copied().sum::<T>();
                    }
                }
                acc.add(*a, g);
            }
            Op::MulCol(a, col) => {
                let cv = acc.val(*col).data().to_vec();
                if graph.needs(*col) {
                    let av = acc.val(*a);
                    let data: Vec<T> = (0..g.rows()).map(|i| dot(g.row(i), av.row(i))).collect();
                    acc.add(*col, Tensor::column(data));
                }
                let mut ga = g;
                for (i, &c) in cv.iter().enumerate() {
                    for o in ga.row_mut(i) {
                        *o *= c;
                    }
                }
                acc.add(*a, ga);
            }
            Op::Scale(a, s) => {
                let s = *s;
                acc.add(*a, g.map(|x| x * s));
            }
            Op::AddScalar(a) => acc.add(*a, g),
            Op::ScaleCols(a, f) => {
                let mut ga = g;
                for i in 0..ga.rows() {
                    for (o, &fv) in ga.row_mut(i).iter_mut().zip(f.iter()) {
                        *o *= fv;
                    }
                }
                acc.add(*a, ga);
            }
            Op::Sigmoid(a) => {
                let ga = zip_map(&g, y, |gv, yv| gv * yv * (T::one() - yv));
                acc.add(*a, ga);
            }
            Op::Tanh(a) => {
                let ga = zip_map(&g, y, |gv, yv| gv * (T::one() - yv * yv));
                acc.add(*a, ga);
            }
            Op::Relu(a) => {
                let ga = zip_map(&g, acc.val(*a), |gv, x| if x > T::zero() { gv } else { T::zero() });
                acc.add(*a, ga);
            }
            Op::Exp(a) => {
                let ga = zip_map(&g, y, |gv, yv| gv * yv);
                acc.add(*a, ga);
            }
            Op::Log(a, eps) => {
                let eps = *eps;
                let ga = zip_map(&g, acc.val(*a), |gv, x| if x > eps { gv / x } else { T::zero() });
                acc.add(*a, ga);
            }
            Op::InvSigmoid(a, eps) => {
                let eps = *eps;
                let hi = T::one() - eps;
                let ga = zip_map(&g, acc.val(*a), |gv, x| {
                    if x > eps && x < hi {
                        gv / (x * (T::one() - x))
                    } else {
                        T::zero()
                    }
                });
                acc.add(*a, ga);
            }
            Op::Clamp(a, lo, hi) => {
                let (lo, hi) = (*lo, *hi);
                let ga = zip_map(&g, acc.val(*a), |gv, x| if x >= lo && x <= hi { gv } else { T::zero() });
                acc.add(*a, ga);
            }
            Op::Minimum(a, b) | Op::Maximum(a, b) => {
                let take_min = matches!(node.op, Op::Minimum(..));
                let av = acc.val(*a);
                let bv = acc.val(*b);
                let mut ga = Tensor::zeros(g.rows(), g.cols());
                let mut gb = Tensor::zeros(g.rows(), g.cols());
                for i in 0..g.len() {
                    let (x, z) = (av.data()[i], bv.data()[i]);
                    let pick_b = if take_min { z < x } else { z > x };
                    if pick_b {
                        gb.data_mut()[i] = g.data()[i];
                    } else {
                        ga.data_mut()[i] = g.data()[i];
                    }
                }
                acc.add(*a, ga);
                acc.add(*b, gb);
            }
            Op::SoftmaxGroups(a, group) => {
                let mut ga = Tensor::zeros(g.rows(), g.cols());
                for i in 0..g.rows() {
                    for ((gc, yc), oc) in g
                        .row(i)
                        .chunks(*group)
                        .zip(y.row(i).chunks(*group))
                        .zip(ga.row_mut(i).chunks_mut(*group))
                    {
                        let s = dot(gc, yc);
                        for ((o, &gv), &yv) in oc.iter_mut().zip(gc).zip(yc) {
                            *o = yv * (gv - s);
                        }
                    }
                }
                acc.add(*a, ga);
            }
            Op::LogSoftmaxRows(a) => {
                let mut ga = Tensor::zeros(g.rows(), g.cols());
                for i in 0..g.rows() {
                    let s: T = g.row(i).iter().copied().sum();
                    for ((o, &gv), &yv) in ga.row_mut(i).iter_mut().zip(g.row(i)).zip(y.row(i)) {
                        *o = gv - yv.exp() * s;
                    }
                }
                acc.add(*a, ga);
            }
            Op::PickCols(a, idx) => {
                if let Some(ga) = acc.slot(*a) {
                    for (i, &j) in idx.iter().enumerate() {
                        let cur = ga.get(i, j);
                        ga.set(i, j, cur + g.get(i, 0));
                    }
                }
            }
            Op::SumAll(a) => {
                let (r, c) = graph.shape(*a);
                acc.add(*a, Tensor::full(r, c, g.item()));
            }
            Op::SumCols(a) => {
                let (r, c) = graph.shape(*a);
                let mut ga = Tensor::zeros(r, c);
                for i in 0..r {
                    let gv = g.get(i, 0);
                    for o in ga.row_mut(i) {
                        *o = gv;
                    }
                }
                acc.add(*a, ga);
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            } => {
                norm_param_grads(&mut acc, &g, xhat, *gamma, *beta);
                if graph.needs(*x) {
                    let gam = acc.val(*gamma).data().to_vec();
                    let n = T::from_usize_lossy(g.cols());
                    let mut gx = Tensor::zeros(g.rows(), g.cols());
                    for i in 0..g.rows() {
                        let gh: Vec<T> = g.row(i).iter().zip(&gam).map(|(&a, &b)| a * b).collect();
                        let xh = xhat.row(i);
                        let m1 = gh.iter().copied().sum::<T>() / n;
                        let m2 = dot(&gh, xh) / n;
                        for ((o, &ghv), &xv) in gx.row_mut(i).iter_mut().zip(&gh).zip(xh) {
                            *o = rstd[i] * (ghv - m1 - xv * m2);
                        }
                    }
                    acc.add(*x, gx);
                }
            }
            Op::GroupNorm {
                x,
                gamma,
                beta,
                groups,
                xhat,
                rstd,
            } => {
                norm_param_grads(&mut acc, &g, xhat, *gamma, *beta);
                if graph.needs(*x) {
                    let gam = acc.val(*gamma).data().to_vec();
                    let (rows, cols) = g.shape();
                    let width = cols / groups;
                    let n = T::from_usize_lossy(rows * width);
                    let mut gx = Tensor::zeros(rows, cols);
                    for gi in 0..*groups {
                        let cs = gi * width;
                        let mut m1 = T::zero();
                        let mut m2 = T::zero();
                        for i in 0..rows {
                            for c in cs..cs + width {
                                let gh = g.get(i, c) * gam[c];
                                m1 += gh;
                                m2 += gh * xhat.get(i, c);
                            }
                        }
                        m1 /= n;
                        m2 /= n;
                        for i in 0..rows {
                            for c in cs..cs + width {
                                let gh = g.get(i, c) * gam[c];
                                gx.set(i, c, rstd[gi] * (gh - m1 - xhat.get(i, c) * m2));
                            }
                        }
                    }
                    acc.add(*x, gx);
                }
            }
            Op::ConcatCols(parts) => {
                let mut c = 0;
                for &p in parts {
                    let (r, w) = graph.shape(p);
                    if graph.needs(p) {
                        let mut gp = Tensor::zeros(r, w);
                        for i in 0..r {
                            gp.row_mut(i).copy_from_slice(&g.row(i)[c..c + w]);
                        }
                        acc.add(p, gp);
                    }
                    c += w;
                }
            }
            Op::ConcatRows(parts) => {
                let mut r0 = 0;
                let n = g.cols();
                for &p in parts {
                    let r = graph.shape(p).0;
                    if graph.needs(p) {
                        let data = g.data()[r0 * n..(r0 + r) * n].to_vec();
                        acc.add(p, Tensor::from_vec(r, n, data));
                    }
                    r0 += r;
                }
            }
            Op::SliceRows(a, start) => {
                let start = *start;
                if let Some(ga) = acc.slot(*a) {
                    let n = g.cols();
                    for (o, &v) in ga.data_mut()[start * n..].iter_mut().zip(g.data()) {
                        *o += v;
                    }
                }
            }
            Op::SliceCols(a, start) => {
                let start = *start;
                if let Some(ga) = acc.slot(*a) {
                    for i in 0..g.rows() {
                        for (o, &v) in ga.row_mut(i)[start..].iter_mut().zip(g.row(i)) {
                            *o += v;
                        }
                    }
                }
            }
            Op::GatherRows(a, idx) => {
                if let Some(ga) = acc.slot(*a) {
                    for (i, &r) in idx.iter().enumerate() {
                        for (o, &v) in ga.row_mut(r).iter_mut().zip(g.row(i)) {
                            *o += v;
                        }
                    }
                }
            }
            Op::Unfold1d {
                x,
                kernel,
                stride,
                pad,
            } => {
                let (len, c) = graph.shape(*x);
                if let Some(gx) = acc.slot(*x) {
                    for t in 0..g.rows() {
                        for j in 0..*kernel {
                            let src = (t * stride + j) as isize - *pad as isize;
                            if src >= 0 && (src as usize) < len {
                                let grow = &g.row(t)[j * c..(j + 1) * c];
                                for (o, &v) in gx.row_mut(src as usize).iter_mut().zip(grow) {
                                    *o += v;
                                }
                            }
                        }
                    }
                }
            }
            Op::MaxRows(a, arg) => {
                if let Some(ga) = acc.slot(*a) {
                    for (j, &i) in arg.iter().enumerate() {
                        let cur = ga.get(i, j);
                        ga.set(i, j, cur + g.get(0, j));
                    }
                }
            }
            Op::DeformSample {
                value,
                pos,
                weights,
                layout,
                heads,
                points,
            } => {
                let val = acc.val(*value);
                let pv = acc.val(*pos);
                let wv = acc.val(*weights);
                let (q, n) = pv.shape();
                let d = val.cols();
                let dh = d / heads;
                let levels = layout.num_levels();
                let mut gval = graph.needs(*value).then(|| Tensor::zeros(val.rows(), d));
                let mut gpos = Tensor::zeros(q, n);
                let mut gw = Tensor::zeros(q, n);
                for qi in 0..q {
                    let grow = g.row(qi);
                    for h in 0..*heads {
                        let gh = &grow[h * dh..(h + 1) * dh];
                        for l in 0..levels {
                            let base = layout.start(l);
                            for k in 0..*points {
                                let j = (h * levels + l) * points + k;
                                let loc = locate(pv.get(qi, j), layout.length(l));
                                let w = wv.get(qi, j);
                                let r0 = &val.row(base + loc.i0)[h * dh..(h + 1) * dh];
                                let r1 = &val.row(base + loc.i1)[h * dh..(h + 1) * dh];
                                let a = T::one() - loc.w1;
                                let d0 = dot(gh, r0);
                                let d1 = dot(gh, r1);
                                gw.set(qi, j, a * d0 + loc.w1 * d1);
                                gpos.set(qi, j, w * loc.slope * (d1 - d0));
                                if let Some(gv) = gval.as_mut() {
                                    let wa = w * a;
                                    let wb = w * loc.w1;
                                    for (o, &x) in gv.row_mut(base + loc.i0)[h * dh..(h + 1) * dh]
                                        .iter_mut()
                                        .zip(gh)
                                    {
                                        *o += wa * x;
                                    }
                                    if wb != T::zero() {
                                        for (o, &x) in gv.row_mut(base + loc.i1)[h * dh..(h + 1) * dh]
                                            .iter_mut()
                                            .zip(gh)
                                        {
                                            *o += wb * x;
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
                if let Some(gv) = gval {
                    acc.add(*value, gv);
                }
                acc.add(*pos, gpos);
                acc.add(*weights, gw);
            }
            Op::GatherSamples {
                value,
                pos,
                layout,
                points,
            } => {
                let val = acc.val(*value);
                let pv = acc.val(*pos);
                let (gn, n) = pv.shape();
                let c = val.cols();
                let mut gval = graph.needs(*value).then(|| Tensor::zeros(val.rows(), c));
                let mut gpos = Tensor::zeros(gn, n);
                for gi in 0..gn {
                    for j in 0..n {
                        let l = j / points;
                        let base = layout.start(l);
                        let loc = locate(pv.get(gi, j), layout.length(l));
                        let gb = &g.row(gi)[j * c..(j + 1) * c];
                        let r0 = val.row(base + loc.i0);
                        let r1 = val.row(base + loc.i1);
                        gpos.set(gi, j, loc.slope * (dot(gb, r1) - dot(gb, r0)));
                        if let Some(gv) = gval.as_mut() {
                            let a = T::one() - loc.w1;
                            for (o, &x) in gv.row_mut(base + loc.i0).iter_mut().zip(gb) {
                                *o += a * x;
                            }
                            if loc.w1 != T::zero() {
                                for (o, &x) in gv.row_mut(base + loc.i1).iter_mut().zip(gb) {
                                    *o += loc.w1 * x;
                                }
                            }
                        }
                    }
                }
                if let Some(gv) = gval {
                    acc.add(*value, gv);
                }
                acc.add(*pos, gpos);
            }
            Op::BlockDot(blocks, q) => {
                let bv = acc.val(*blocks).clone();
                let qv = acc.val(*q).clone();
                let c = qv.cols();
                let n = g.cols();
                let mut gb = Tensor::zeros(bv.rows(), bv.cols());
                let mut gq = Tensor::zeros(qv.rows(), c);
                for i in 0..g.rows() {
                    for j in 0..n {
                        let gv = g.get(i, j);
                        let brow = &bv.row(i)[j * c..(j + 1) * c];
                        for (o, &x) in gq.row_mut(i).iter_mut().zip(brow) {
                            *o += gv * x;
                        }
                        for (o, &x) in gb.row_mut(i)[j * c..(j + 1) * c].iter_mut().zip(qv.row(i)) {
                            *o += gv * x;
                        }
                    }
                }
                acc.add(*blocks, gb);
                acc.add(*q, gq);
            }
            Op::BlockWeightedSum(w, blocks) => {
                let wv = acc.val(*w).clone();
                let bv = acc.val(*blocks).clone();
                let n = wv.cols();
                let c = g.cols();
                let mut gw = Tensor::zeros(wv.rows(), n);
                let mut gb = Tensor::zeros(bv.rows(), bv.cols());
                for i in 0..g.rows() {
                    let grow = g.row(i);
                    for j in 0..n {
                        let brow = &bv.row(i)[j * c..(j + 1) * c];
                        gw.set(i, j, dot(grow, brow));
                        let wj = wv.get(i, j);
                        for (o, &x) in gb.row_mut(i)[j * c..(j + 1) * c].iter_mut().zip(grow) {
                            *o += wj * x;
                        }
                    }
                }
                acc.add(*w, gw);
                acc.add(*blocks, gb);
            }
            Op::SigmoidFocal {
                logits,
                targets,
                alpha,
                gamma,
            } => {
                let lv = acc.val(*logits);
                let data = targets
                    .iter()
                    .enumerate()
                    .map(|(i, &t)| g.get(i, 0) * focal_with_grad(lv.get(i, 0), t, *alpha, *gamma).1)
                    .collect();
                acc.add(*logits, Tensor::column(data));
            }
            Op::Giou { start, end, targets } => {
                let sv = acc.val(*start);
                let ev = acc.val(*end);
                let mut gs = Vec::with_capacity(targets.len());
                let mut ge = Vec::with_capacity(targets.len());
                for (i, tgt) in targets.iter().enumerate() {
                    let pred = Segment {
                        start: sv.get(i, 0),
                        end: ev.get(i, 0),
                    };
                    let (_, grad) = giou_with_grad(&pred, tgt);
                    gs.push(g.get(i, 0) * grad[0]);
                    ge.push(g.get(i, 0) * grad[1]);
                }
                acc.add(*start, Tensor::column(gs));
                acc.add(*end, Tensor::column(ge));
            }
        }
    }

    Backward { params, inputs }
}

fn norm_param_grads<T: Scalar>(acc: &mut Acc<'_, '_, T>, g: &Tensor<T>, xhat: &Tensor<T>, gamma: Var, beta: Var) {
    if let Some(gg) = acc.slot(gamma) {
        for i in 0..g.rows() {
            for ((o, &gv), &xv) in gg.data_mut().iter_mut().zip(g.row(i)).zip(xhat.row(i)) {
                *o += gv * xv;
            }
        }
    }
    if let Some(gb) = acc.slot(beta) {
        for i in 0..g.rows() {
            for (o, &gv) in gb.data_mut().iter_mut().zip(g.row(i)) {
                *o += gv;
            }
        }
    }
}
