//! Set-prediction loss of one decoder layer given its matching.

use std::ops::{Add, AddAssign};

use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, Var};
use crate::error::{Error, Result};
use crate::geometry::Segment;
use crate::heads::LocalizationOutput;
use crate::matching::Matching;
use crate::scalar::{lit, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub giou: f64,
    pub cls: f64,
    pub count: f64,
    pub caption: f64,
    pub focal_alpha: f64,
    pub focal_gamma: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            giou: 2.0,
            cls: 1.0,
            count: 1.0,
            caption: 1.0,
            focal_alpha: 0.25,
            focal_gamma: 2.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [self.giou, self.cls, self.count, self.caption, self.focal_alpha, self.focal_gamma];
        if all.iter().any(|w| !w.is_finite() || *w < 0.0) || self.focal_alpha > 1.0 {
            return Err(Error::Config("loss weights must be finite and non-negative".into()));
        }
        Ok(())
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            giou: self.giou * factor,
            cls: self.cls * factor,
            count: self.count * factor,
            caption: self.caption * factor,
            ..*self
        }
    }

    pub fn sum(&self) -> f64 {
        self.giou + self.cls + self.count + self.caption
    }
}

/// Unweighted loss terms and the weighted total.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossComponents {
    pub giou: f64,
    pub cls: f64,
    pub count: f64,
    pub caption: f64,
    pub total: f64,
}

impl Add for LossComponents {
    type Output = Self;

    fn add(self, o: Self) -> Self {
        Self {
            giou: self.giou + o.giou,
            cls: self.cls + o.cls,
            count: self.count + o.count,
            caption: self.caption + o.caption,
            total: self.total + o.total,
        }
    }
}

impl AddAssign for LossComponents {
    fn add_assign(&mut self, o: Self) {
        *self = *self + o;
    }
}

/// Loss of one layer: a graph scalar plus its component values.
#[derive(Debug, Clone, Copy)]
pub struct LayerLoss {
    pub total: Var,
    pub components: LossComponents,
}

/// Inputs to [`layer_loss`] beyond the localization output.
#[derive(Debug, Clone, Copy)]
pub struct LayerTargets<'a, T> {
    pub matching: &'a Matching<T>,
    /// Ground-truth segments; `None` when timestamps are not supervised.
    pub segments: Option<&'a [Segment<T>]>,
    pub num_events: usize,
    pub max_count: usize,
}

/// `count_logits: 1 x (max_count+1)`; `caption_nll`: per matched pair mean
/// token NLL (`|matching| x 1`, pair order), absent when nothing matched.
pub fn layer_loss<T: Scalar>(
    g: &mut Graph<'_, T>,
    loc: &LocalizationOutput,
    count_logits: Var,
    caption_nll: Option<Var>,
    targets: LayerTargets<'_, T>,
    weights: &LossWeights,
) -> LayerLoss {
    let n = g.shape(loc.logits).0;
    let matched = targets.matching.len();
    let mut terms: Vec<Var> = Vec::with_capacity(4);
    let mut comp = LossComponents::default();

    if let (Some(segments), true) = (targets.segments, matched > 0) {
        let queries = targets.matching.queries();
        let gts: Vec<Segment<T>> = targets.matching.pairs.iter().map(|&(_, j)| segments[j]).collect();
        let start = g.gather_rows(loc.start, queries.clone());
        let end = g.gather_rows(loc.end, queries);
        let giou = g.giou(start, end, gts);
        let mean = g.mean(giou);
        let l = g.add_scalar(mean, -T::one());
        let l = g.scale(l, -T::one());
        comp.giou = g.item(l).as_f64();
        terms.push(g.scale(l, lit(weights.giou)));
    }

    let mut labels = vec![false; n];
    for &(q, _) in &targets.matching.pairs {
        labels[q] = true;
    }
    let focal = g.sigmoid_focal(loc.logits, labels, lit(weights.focal_alpha), lit(weights.focal_gamma));
    let focal = g.sum(focal);
    let cls = g.scale(focal, T::one() / T::from_usize_lossy(matched.max(1)));
    comp.cls = g.item(cls).as_f64();
    terms.push(g.scale(cls, lit(weights.cls)));

    let target = targets.num_events.min(targets.max_count);
    let logp = g.log_softmax_rows(count_logits);
    let picked = g.pick_cols(logp, vec![target]);
    let count = g.scale(picked, -T::one());
    comp.count = g.item(count).as_f64();
    terms.push(g.scale(count, lit(weights.count)));

    if let (Some(nll), true) = (caption_nll, matched > 0) {
        let cap = g.mean(nll);
        comp.caption = g.item(cap).as_f64();
        terms.push(g.scale(cap, lit(weights.caption)));
    }

    let mut total = terms[0];
    for &t in &terms[1..] {
        total = g.add(total, t);
    }
    comp.total = g.item(total).as_f64();
    LayerLoss { total, components: comp }
}

/// Caption loss alone: mean of per-caption NLLs.
pub fn caption_only_loss<T: Scalar>(g: &mut Graph<'_, T>, caption_nll: Var, weights: &LossWeights) -> LayerLoss {
    let cap = g.mean(caption_nll);
    let total = g.scale(cap, lit(weights.caption));
    LayerLoss {
        total,
        components: LossComponents {
            caption: g.item(cap).as_f64(),
            total: g.item(total).as_f64(),
            ..Default::default()
        },
    }
}

/// Sums per-layer losses into one scalar.
pub fn sum_layers<T: Scalar>(g: &mut Graph<'_, T>, layers: &[LayerLoss]) -> LayerLoss {
    assert!(!layers.is_empty(), "no layer losses");
    let mut total = layers[0].total;
    let mut comp = layers[0].components;
    for l in &layers[1..] {
        total = g.add(total, l.total);
        comp += l.components;
    }
    LayerLoss { total, components: comp }
}
