//! Linear-interpolation sampling along the temporal axis of stacked
//! pyramid levels.

use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Row ranges of each pyramid level inside a stacked `(sum T_l) x C` matrix.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LevelLayout {
    lengths: Vec<usize>,
    starts: Vec<usize>,
}

impl LevelLayout {
    /// Panics on an empty list or a zero-length level.
    pub fn new(lengths: Vec<usize>) -> Self {
        assert!(!lengths.is_empty(), "at least one level is required");
        assert!(lengths.iter().all(|&l| l > 0), "levels must be non-empty");
        let mut starts = Vec::with_capacity(lengths.len());
        let mut acc = 0;
        for &l in &lengths {
            starts.push(acc);
            acc += l;
        }
        Self { lengths, starts }
    }

    pub fn num_levels(&self) -> usize {
        self.lengths.len()
    }

    pub fn lengths(&self) -> &[usize] {
        &self.lengths
    }

    pub fn start(&self, level: usize) -> usize {
        self.starts[level]
    }

    pub fn length(&self, level: usize) -> usize {
        self.lengths[level]
    }

    pub fn total(&self) -> usize {
        self.lengths.iter().sum()
    }

    /// Normalized position of every stacked row: `i / (T_l - 1)` within its
    /// level (0 for single-row levels).
    pub fn normalized_positions<T: Scalar>(&self) -> Vec<T> {
        let mut out = Vec::with_capacity(self.total());
        for &len in &self.lengths {
            for i in 0..len {
                out.push(if len > 1 {
                    T::from_usize_lossy(i) / T::from_usize_lossy(len - 1)
                } else {
                    T::zero()
                });
            }
        }
        out
    }
}

/// Where a normalized position lands on a level of `len` rows.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleLoc<T> {
    pub i0: usize,
    pub i1: usize,
    /// Interpolation weight of row `i1`.
    pub w1: T,
    /// d(continuous index)/d(normalized position); zero when clamped.
    pub slope: T,
}

/// Maps a normalized position `p` to the continuous index `p * (len - 1)`,
/// clamping to the first/last row outside the level.
#[inline]
pub fn locate<T: Scalar>(pos: T, len: usize) -> SampleLoc<T> {
    let clamped_at = |i: usize| SampleLoc {
        i0: i,
        i1: i,
        w1: T::zero(),
        slope: T::zero(),
    };
    if len <= 1 {
        return clamped_at(0);
    }
    let max = T::from_usize_lossy(len - 1);
    let x = pos * max;
    if x.is_nan() || x < T::zero() {
        return clamped_at(0);
    }
    if x > max {
        return clamped_at(len - 1);
    }
    let i0 = x.floor().to_usize().unwrap_or(0).min(len - 2);
    SampleLoc {
        i0,
        i1: i0 + 1,
        w1: x - T::from_usize_lossy(i0),
        slope: max,
    }
}

/// Accumulates `weight * interp(value, loc)` restricted to `cols` into `out`.
#[inline]
pub(crate) fn accumulate_sample<T: Scalar>(
    value: &Tensor<T>,
    base_row: usize,
    loc: &SampleLoc<T>,
    col0: usize,
    out: &mut [T],
    weight: T,
) {
    let n = out.len();
    let r0 = &value.row(base_row + loc.i0)[col0..col0 + n];
    let r1 = &value.row(base_row + loc.i1)[col0..col0 + n];
    let a = weight * (T::one() - loc.w1);
    let b = weight * loc.w1;
    for ((o, &v0), &v1) in out.iter_mut().zip(r0).zip(r1) {
        *o += a * v0 + b * v1;
    }
}

/// Multi-head weighted sampling. `pos` and `weights` are `Q x (H*L*K)` with
/// column `(h * L + l) * K + k`; `value` is `(sum T_l) x D`, head `h` owning
/// columns `h*D/H .. (h+1)*D/H`.
pub(crate) fn deform_sample_forward<T: Scalar>(
    value: &Tensor<T>,
    pos: &Tensor<T>,
    weights: &Tensor<T>,
    layout: &LevelLayout,
    heads: usize,
    points: usize,
) -> Tensor<T> {
    let q = pos.rows();
    let d = value.cols();
    let dh = d / heads;
    let levels = layout.num_levels();
    let mut out = Tensor::zeros(q, d);
    for qi in 0..q {
        let prow = pos.row(qi);
        let wrow = weights.row(qi);
        let orow = out.row_mut(qi);
        for h in 0..heads {
            let ohead = &mut orow[h * dh..(h + 1) * dh];
            for l in 0..levels {
                let len = layout.length(l);
                let base = layout.start(l);
                for k in 0..points {
                    let j = (h * levels + l) * points + k;
                    let loc = locate(prow[j], len);
                    accumulate_sample(value, base, &loc, h * dh, ohead, wrow[j]);
                }
            }
        }
    }
    out
}

/// Per-row sampling of `L*K` points, concatenated along columns:
/// output row `g` is `[v(pos[g,0]), v(pos[g,1]), ...]`.
pub(crate) fn gather_samples_forward<T: Scalar>(
    value: &Tensor<T>,
    pos: &Tensor<T>,
    layout: &LevelLayout,
    points: usize,
) -> Tensor<T> {
    let g = pos.rows();
    let n = pos.cols();
    let c = value.cols();
    let mut out = Tensor::zeros(g, n * c);
    for gi in 0..g {
        for j in 0..n {
            let l = j / points;
            let loc = locate(pos.get(gi, j), layout.length(l));
            let orow = &mut out.row_mut(gi)[j * c..(j + 1) * c];
            accumulate_sample(value, layout.start(l), &loc, 0, orow, T::one());
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn locate_interior_and_edges() {
        let loc = locate(0.5f64, 5);
        assert_eq!((loc.i0, loc.i1), (2, 3));
        assert_eq!(loc.w1, 0.0);
        assert_eq!(loc.slope, 4.0);
        let right = locate(1.0f64, 5);
        assert_eq!((right.i0, right.i1), (3, 4));
        assert_eq!(right.w1, 1.0);
        let over = locate(1.3f64, 5);
        assert_eq!((over.i0, over.i1, over.slope), (4, 4, 0.0));
        let under = locate(-0.2f64, 5);
        assert_eq!((under.i0, under.i1, under.slope), (0, 0, 0.0));
        let single = locate(0.7f64, 1);
        assert_eq!((single.i0, single.i1), (0, 0));
    }

    #[test]
    fn layout_positions() {
        let layout = LevelLayout::new(vec![3, 1]);
        assert_eq!(layout.total(), 4);
        assert_eq!(layout.start(1), 3);
        assert_eq!(layout.normalized_positions::<f64>(), vec![0.0, 0.5, 1.0, 0.0]);
    }
}
