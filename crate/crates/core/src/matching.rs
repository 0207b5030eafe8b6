//! Bipartite assignment between predictions and ground-truth events, and
//! the matching costs that drive it.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{giou_unchecked, Segment};
use crate::heads::EventDetection;
use crate::scalar::{lit, Scalar};
use crate::tensor::Tensor;

/// Probability clamp used by the focal terms.
pub const FOCAL_EPS: f64 = 1e-8;

/// A one-to-one assignment, pairs sorted by query index.
#[derive(Debug, Clone, PartialEq)]
pub struct Matching<T> {
    pub pairs: Vec<(usize, usize)>,
    pub total_cost: T,
}

impl<T> Matching<T> {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn queries(&self) -> Vec<usize> {
        self.pairs.iter().map(|p| p.0).collect()
    }

    pub fn targets(&self) -> Vec<usize> {
        self.pairs.iter().map(|p| p.1).collect()
    }
}

/// Minimum-cost assignment of `min(rows, cols)` pairs.
pub fn hungarian<T: Scalar>(cost: &Tensor<T>) -> Result<Matching<T>> {
    if !cost.is_finite() {
        return Err(Error::NonFinite("matching cost"));
    }
    let (n, m) = cost.shape();
    if n == 0 || m == 0 {
        return Ok(Matching {
            pairs: Vec::new(),
            total_cost: T::zero(),
        });
    }
    let mut pairs = if n <= m {
        assign(n, m, |i, j| cost.get(i, j).as_f64())
    } else {
        assign(m, n, |i, j| cost.get(j, i).as_f64())
            .into_iter()
            .map(|(g, q)| (q, g))
            .collect()
    };
    pairs.sort_unstable();
    let total_cost = pairs.iter().map(|&(i, j)| cost.get(i, j)).sum();
    Ok(Matching { pairs, total_cost })
}

/// Shortest augmenting path with row/column potentials; requires
/// `rows <= cols`. Returns `(row, col)` pairs.
fn assign(rows: usize, cols: usize, c: impl Fn(usize, usize) -> f64) -> Vec<(usize, usize)> {
    // 1-based arrays, index 0 is the virtual source column.
    let mut u = vec![0.0; rows + 1];
    let mut v = vec![0.0; cols + 1];
    let mut row_of = vec![0usize; cols + 1];
    let mut way = vec![0usize; cols + 1];
    for i in 1..=rows {
        row_of[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; cols + 1];
        let mut used = vec![false; cols + 1];
        loop {
            used[j0] = true;
            let i0 = row_of[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=cols {
                if used[j] {
                    continue;
                }
                let cur = c(i0 - 1, j - 1) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=cols {
                if used[j] {
                    u[row_of[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if row_of[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            row_of[j0] = row_of[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    (1..=cols)
        .filter(|&j| row_of[j] != 0)
        .map(|j| (row_of[j] - 1, j - 1))
        .collect()
}

/// Focal loss of a probability against a binary label; `alpha` weighs
/// positives and `1 - alpha` negatives.
pub fn focal_loss<T: Scalar>(prob: T, positive: bool, alpha: T, gamma: T) -> T {
    let eps: T = lit(FOCAL_EPS);
    let p = prob.max(eps).min(T::one() - eps);
    let (pt, a) = if positive { (p, alpha) } else { (T::one() - p, T::one() - alpha) };
    -a * (T::one() - pt).powf(gamma) * pt.ln()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MatchCostConfig {
    pub alpha_giou: f64,
    pub alpha_cls: f64,
    pub focal_alpha: f64,
    pub focal_gamma: f64,
    /// Caption-only matching: length modulation exponent.
    pub caption_gamma: f64,
    /// Caption-only matching: classification balance.
    pub caption_alpha_cls: f64,
}

impl Default for MatchCostConfig {
    fn default() -> Self {
        Self {
            alpha_giou: 2.0,
            alpha_cls: 1.0,
            focal_alpha: 0.25,
            focal_gamma: 2.0,
            caption_gamma: 2.0,
            caption_alpha_cls: 0.5,
        }
    }
}

impl MatchCostConfig {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.alpha_giou,
            self.alpha_cls,
            self.focal_alpha,
            self.focal_gamma,
            self.caption_gamma,
            self.caption_alpha_cls,
        ];
        if all.iter().any(|w| !w.is_finite() || *w < 0.0) || self.focal_alpha > 1.0 {
            return Err(Error::Config("matching weights must be finite and non-negative".into()));
        }
        Ok(())
    }

    fn focal_cost<T: Scalar>(&self, conf: T) -> T {
        focal_loss(conf, true, lit(self.focal_alpha), lit(self.focal_gamma))
    }
}

/// `N x G` cost: `alpha_giou * (-giou) + alpha_cls * focal(conf, positive)`.
pub fn match_cost<T: Scalar>(preds: &[EventDetection<T>], gts: &[Segment<T>], cfg: &MatchCostConfig) -> Tensor<T> {
    let mut out = Tensor::zeros(preds.len(), gts.len());
    let (wg, wc): (T, T) = (lit(cfg.alpha_giou), lit(cfg.alpha_cls));
    for (i, p) in preds.iter().enumerate() {
        let cls = wc * cfg.focal_cost(p.loc_confidence);
        for (j, gt) in gts.iter().enumerate() {
            out.set(i, j, -wg * giou_unchecked(&p.segment, gt) + cls);
        }
    }
    out
}

/// `N x G` cost from caption likelihoods: `loglik` holds
/// `sum_t log c_t` of caption `g` under query `j`, `lengths[g]` the token
/// count. Entry `-(loglik / M^gamma) + alpha_cls * focal(conf, positive)`.
pub fn caption_match_cost<T: Scalar>(loglik: &Tensor<T>, lengths: &[usize], confidences: &[T], cfg: &MatchCostConfig) -> Tensor<T> {
    let (n, g) = loglik.shape();
    assert_eq!(lengths.len(), g, "one length per caption");
    assert_eq!(confidences.len(), n, "one confidence per query");
    let gamma: T = lit(cfg.caption_gamma);
    let wc: T = lit(cfg.caption_alpha_cls);
    let mut out = Tensor::zeros(n, g);
    for i in 0..n {
        let cls = wc * cfg.focal_cost(confidences[i]);
        for (j, &m) in lengths.iter().enumerate() {
            let norm = T::from_usize_lossy(m.max(1)).powf(gamma);
            out.set(i, j, -loglik.get(i, j) / norm + cls);
        }
    }
    out
}
