//! Localization, captioning and event-count heads applied to refined
//! event queries. One set of head parameters serves every decoder layer.

use std::sync::Arc;

use rand::Rng;

use crate::attention::Reference;
use crate::autograd::{Graph, LevelLayout, Var};
use crate::config::{CaptionHeadKind, ModelConfig};
use crate::geometry::Segment;
use crate::nn::{Embedding, Linear, LstmCell, LstmState, Mlp};
use crate::params::ParamStore;
use crate::scalar::{lit, Scalar};
use crate::tensor::Tensor;

/// Reserved vocabulary ids.
pub mod tokens {
    pub const PAD: usize = 0;
    pub const BOS: usize = 1;
    pub const EOS: usize = 2;
    pub const UNK: usize = 3;
}

/// Clamp used before inverse sigmoid and logarithms of probabilities.
pub const PROB_EPS: f64 = 1e-5;

/// A localized event proposal from one query.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EventDetection<T> {
    pub segment: Segment<T>,
    pub loc_confidence: T,
    pub query_index: usize,
}

/// Per-query localization outputs, each `N x 1`.
#[derive(Debug, Clone, Copy)]
pub struct LocalizationOutput {
    pub center: Var,
    pub length: Var,
    pub start: Var,
    pub end: Var,
    /// Foreground logits; `sigmoid` gives the localization confidence.
    pub logits: Var,
}

impl LocalizationOutput {
    pub fn detections<T: Scalar>(&self, g: &Graph<'_, T>) -> Vec<EventDetection<T>> {
        let s = g.value(self.start);
        let e = g.value(self.end);
        let l = g.value(self.logits);
        (0..s.rows())
            .map(|i| EventDetection {
                segment: Segment {
                    start: s.get(i, 0),
                    end: e.get(i, 0).max(s.get(i, 0)),
                },
                loc_confidence: crate::autograd::sigmoid_value(l.get(i, 0)),
                query_index: i,
            })
            .collect()
    }
}

/// Box MLP predicting `(delta center, raw length)` relative to the
/// reference, plus a separate foreground classifier.
#[derive(Debug, Clone)]
pub struct LocalizationHead {
    pub bbox: Mlp,
    pub class: Linear,
}

impl LocalizationHead {
    pub fn new<T: Scalar, R: Rng + ?Sized>(store: &mut ParamStore<T>, d_model: usize, rng: &mut R) -> Self {
        let bbox = Mlp::new(store, "heads.loc.bbox", &[d_model, d_model, d_model, 2], rng);
        let last = bbox.last().clone();
        store.get_mut(last.weight).data_mut().fill(T::zero());
        store.get_mut(last.bias).data_mut().fill(T::zero());
        let class = Linear::new(store, "heads.loc.class", d_model, 1, rng);
        // Prior foreground probability 0.1.
        store.get_mut(class.bias).data_mut().fill(lit(-(0.9f64 / 0.1).ln()));
        Self { bbox, class }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, queries: Var, reference: Reference) -> LocalizationOutput {
        let eps: T = lit(PROB_EPS);
        let delta = self.bbox.forward(g, queries);
        let d_center = g.slice_cols(delta, 0, 1);
        let raw_len = g.slice_cols(delta, 1, 1);
        let base = g.inverse_sigmoid(reference.center(), eps);
        let center = g.add(base, d_center);
        let center = g.sigmoid(center);
        let length = match reference {
            Reference::Point(_) => g.sigmoid(raw_len),
            Reference::Span { length, .. } => {
                let base = g.inverse_sigmoid(length, eps);
                let l = g.add(base, raw_len);
                g.sigmoid(l)
            }
        };
        let half = g.scale(length, lit(0.5));
        let start = g.sub(center, half);
        let start = g.clamp(start, T::zero(), T::one());
        let end = g.add(center, half);
        let end = g.clamp(end, T::zero(), T::one());
        let logits = self.class.forward(g, queries);
        LocalizationOutput {
            center,
            length,
            start,
            end,
            logits,
        }
    }
}

/// Distribution over event counts `0..=max_count` and its clamped argmax.
#[derive(Debug, Clone, PartialEq)]
pub struct CountPrediction<T> {
    pub distribution: Vec<T>,
    pub predicted_count: usize,
}

impl<T: Scalar> CountPrediction<T> {
    pub fn from_logits(logits: &[T]) -> Self {
        let mx = logits.iter().copied().fold(T::neg_infinity(), T::max);
        let exps: Vec<T> = logits.iter().map(|&v| (v - mx).exp()).collect();
        let total: T = exps.iter().copied().sum();
        Self::from_distribution(exps.into_iter().map(|e| e / total).collect())
    }

    /// `predicted_count = max(argmax, 1)`; the first maximum wins ties.
    pub fn from_distribution(distribution: Vec<T>) -> Self {
        let mut best = 0;
        for (i, &p) in distribution.iter().enumerate() {
            if p > distribution[best] {
                best = i;
            }
        }
        Self {
            predicted_count: best.max(1),
            distribution,
        }
    }
}

/// Max-pool over queries followed by a linear layer.
#[derive(Debug, Clone)]
pub struct CountHead {
    pub fc: Linear,
}

impl CountHead {
    pub fn new<T: Scalar, R: Rng + ?Sized>(store: &mut ParamStore<T>, d_model: usize, max_count: usize, rng: &mut R) -> Self {
        Self {
            fc: Linear::new(store, "heads.count", d_model, max_count + 1, rng),
        }
    }

    /// Logits `1 x (max_count + 1)`.
    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, queries: Var) -> Var {
        let pooled = g.max_rows(queries);
        self.fc.forward(g, pooled)
    }

    pub fn predict<T: Scalar>(&self, g: &mut Graph<'_, T>, queries: Var) -> CountPrediction<T> {
        let logits = self.forward(g, queries);
        CountPrediction::from_logits(g.value(logits).data())
    }
}

/// A decoded caption with the probability of every emitted token.
#[derive(Debug, Clone, PartialEq)]
pub struct CaptionHypothesis<T> {
    /// Ends with [`tokens::EOS`].
    pub tokens: Vec<usize>,
    pub token_probs: Vec<T>,
    /// The length limit was hit and the end token forced.
    pub truncated: bool,
}

impl<T> CaptionHypothesis<T> {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Tokens without the trailing end marker.
    pub fn words(&self) -> &[usize] {
        match self.tokens.last() {
            Some(&tokens::EOS) => &self.tokens[..self.tokens.len() - 1],
            _ => &self.tokens,
        }
    }
}

/// Deformable soft attention: per word, sample `K` points per level near
/// the reference and attend over them with `[h, q]` as the query.
#[derive(Debug, Clone)]
pub struct DeformableSoftAttention {
    pub offsets: Linear,
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub levels: usize,
    pub points: usize,
}

/// Memory projections computed once per caption batch.
#[derive(Debug, Clone)]
pub struct DsaContext {
    pub keys: Var,
    pub values: Var,
    pub layout: Arc<LevelLayout>,
    /// `G x 1` reference points, one per caption row.
    pub references: Var,
}

impl DsaContext {
    /// Same memory projections, new reference points.
    pub fn with_references(&self, references: Var) -> Self {
        Self {
            references,
            ..self.clone()
        }
    }
}

/// Per-step soft-attention result.
#[derive(Debug, Clone, Copy)]
pub struct DsaStep {
    pub context: Var,
    pub weights: Var,
    pub positions: Var,
}

impl DeformableSoftAttention {
    fn new<T: Scalar, R: Rng + ?Sized>(store: &mut ParamStore<T>, cfg: &ModelConfig, rng: &mut R) -> Self {
        let (levels, points) = (cfg.num_levels, cfg.points);
        let qdim = cfg.caption_hidden + cfg.d_model;
        let offsets = Linear::zeroed(store, "heads.caption.dsa.offsets", qdim, levels * points);
        let bias = store.get_mut(offsets.bias);
        for l in 0..levels {
            for k in 0..points {
                bias.set(0, l * points + k, lit(2.0 * (k as f64 - (points as f64 - 1.0) / 2.0)));
            }
        }
        Self {
            offsets,
            query: Linear::new(store, "heads.caption.dsa.query", qdim, cfg.d_model, rng),
            key: Linear::new(store, "heads.caption.dsa.key", cfg.d_model, cfg.d_model, rng),
            value: Linear::new(store, "heads.caption.dsa.value", cfg.d_model, cfg.d_model, rng),
            levels,
            points,
        }
    }

    pub fn prepare<T: Scalar>(&self, g: &mut Graph<'_, T>, memory: Var, layout: &Arc<LevelLayout>, references: Var) -> DsaContext {
        DsaContext {
            keys: self.key.forward(g, memory),
            values: self.value.forward(g, memory),
            layout: layout.clone(),
            references,
        }
    }

    /// `hidden: G x H`, `queries: G x D`.
    pub fn attend<T: Scalar>(&self, g: &mut Graph<'_, T>, hidden: Var, queries: Var, ctx: &DsaContext) -> DsaStep {
        let n = self.levels * self.points;
        let hq = g.concat_cols(&[hidden, queries]);
        let inv_len: Vec<T> = (0..n)
            .map(|j| T::one() / T::from_usize_lossy(ctx.layout.length(j / self.points)))
            .collect();
        let off = self.offsets.forward(g, hq);
        let off = g.scale_cols(off, Arc::new(inv_len));
        let ones = g.constant(Tensor::full(1, n, T::one()));
        let base = g.matmul(ctx.references, ones);
        let positions = g.add(base, off);
        let q = self.query.forward(g, hq);
        let d = g.shape(q).1;
        let keys = g.gather_samples(ctx.keys, positions, ctx.layout.clone(), self.points);
        let values = g.gather_samples(ctx.values, positions, ctx.layout.clone(), self.points);
        let scores = g.block_dot(keys, q);
        let scores = g.scale(scores, T::one() / T::from_usize_lossy(d).sqrt());
        let weights = g.softmax_rows(scores);
        let context = g.block_weighted_sum(weights, values);
        DsaStep {
            context,
            weights,
            positions,
        }
    }
}

/// Teacher-forced scores of a batch of target captions.
#[derive(Debug, Clone)]
pub struct TeacherForced {
    /// `G x M_max` log-probabilities of the target tokens, zero past each
    /// caption's end.
    pub token_logprobs: Var,
    /// Per-caption mean negative log-likelihood, `G x 1`.
    pub mean_nll: Var,
    pub lengths: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct StepOutput {
    pub logits: Var,
    pub state: LstmState,
    pub attention: Option<DsaStep>,
}

/// Recurrent captioner shared by every decoder layer.
#[derive(Debug, Clone)]
pub struct CaptionHead {
    pub kind: CaptionHeadKind,
    pub embed: Embedding,
    pub lstm: LstmCell,
    pub out: Linear,
    pub dsa: Option<DeformableSoftAttention>,
    pub max_len: usize,
    pub vocab_size: usize,
}

impl CaptionHead {
    pub fn new<T: Scalar, R: Rng + ?Sized>(store: &mut ParamStore<T>, cfg: &ModelConfig, rng: &mut R) -> Self {
        let embed = Embedding::new(store, "heads.caption.embed", cfg.vocab_size, cfg.word_dim, rng);
        let dsa = match cfg.caption_head {
            CaptionHeadKind::Light => None,
            CaptionHeadKind::Dsa => Some(DeformableSoftAttention::new(store, cfg, rng)),
        };
        let input = cfg.d_model + cfg.word_dim + if dsa.is_some() { cfg.d_model } else { 0 };
        Self {
            kind: cfg.caption_head,
            embed,
            lstm: LstmCell::new(store, "heads.caption.lstm", input, cfg.caption_hidden, rng),
            out: Linear::new(store, "heads.caption.out", cfg.caption_hidden, cfg.vocab_size, rng),
            dsa,
            max_len: cfg.max_caption_len,
            vocab_size: cfg.vocab_size,
        }
    }

    /// Memory context for the DSA head; `None` for the light head.
    pub fn prepare<T: Scalar>(&self, g: &mut Graph<'_, T>, memory: Var, layout: &Arc<LevelLayout>, references: Var) -> Option<DsaContext> {
        self.dsa.as_ref().map(|d| d.prepare(g, memory, layout, references))
    }

    /// One recurrent step for `G` rows; `prev` holds the previous token ids.
    pub fn step<T: Scalar>(&self, g: &mut Graph<'_, T>, queries: Var, prev: Vec<usize>, state: LstmState, ctx: Option<&DsaContext>) -> StepOutput {
        let words = self.embed.forward(g, prev);
        let (input, attention) = match (&self.dsa, ctx) {
            (Some(dsa), Some(ctx)) => {
                let att = dsa.attend(g, state.h, queries, ctx);
                (g.concat_cols(&[att.context, queries, words]), Some(att))
            }
            (None, _) => (g.concat_cols(&[queries, words]), None),
            (Some(_), None) => panic!("DSA caption head needs a memory context"),
        };
        let state = self.lstm.step(g, input, state);
        let logits = self.out.forward(g, state.h);
        StepOutput {
            logits,
            state,
            attention,
        }
    }

    /// Scores `targets[i]` (each ending with EOS) given `queries` row `i`.
    pub fn teacher_force<T: Scalar>(&self, g: &mut Graph<'_, T>, queries: Var, targets: &[Vec<usize>], ctx: Option<&DsaContext>) -> TeacherForced {
        let rows = g.shape(queries).0;
        assert_eq!(rows, targets.len(), "one target caption per query row");
        assert!(targets.iter().all(|t| !t.is_empty()), "empty target caption");
        let lengths: Vec<usize> = targets.iter().map(Vec::len).collect();
        let steps = lengths.iter().copied().max().unwrap_or(0);
        let mut state = self.lstm.zero_state(g, rows);
        let mut columns = Vec::with_capacity(steps);
        for t in 0..steps {
            let prev: Vec<usize> = targets
                .iter()
                .map(|c| if t == 0 { tokens::BOS } else { c.get(t - 1).copied().unwrap_or(tokens::PAD) })
                .collect();
            let step = self.step(g, queries, prev, state, ctx);
            state = step.state;
            let logp = g.log_softmax_rows(step.logits);
            let target: Vec<usize> = targets.iter().map(|c| c.get(t).copied().unwrap_or(tokens::PAD)).collect();
            let mut picked = g.pick_cols(logp, target);
            if lengths.iter().any(|&m| m <= t) {
                let mask: Vec<T> = lengths.iter().map(|&m| if t < m { T::one() } else { T::zero() }).collect();
                let mask = g.constant(Tensor::column(mask));
                picked = g.mul_col(picked, mask);
            }
            columns.push(picked);
        }
        let token_logprobs = g.concat_cols(&columns);
        let total = g.sum_cols(token_logprobs);
        let inv: Vec<T> = lengths.iter().map(|&m| -T::one() / T::from_usize_lossy(m)).collect();
        let inv = g.constant(Tensor::column(inv));
        let mean_nll = g.mul_col(total, inv);
        TeacherForced {
            token_logprobs,
            mean_nll,
            lengths,
        }
    }

    /// Greedy decoding of every query row until EOS or the length limit.
    pub fn greedy<T: Scalar>(&self, g: &mut Graph<'_, T>, queries: Var, ctx: Option<&DsaContext>) -> Vec<CaptionHypothesis<T>> {
        let rows = g.shape(queries).0;
        let mut out: Vec<CaptionHypothesis<T>> = (0..rows)
            .map(|_| CaptionHypothesis {
                tokens: Vec::new(),
                token_probs: Vec::new(),
                truncated: false,
            })
            .collect();
        let mut done = vec![false; rows];
        let mut prev = vec![tokens::BOS; rows];
        let mut state = self.lstm.zero_state(g, rows);
        for t in 0..self.max_len {
            let step = self.step(g, queries, prev.clone(), state, ctx);
            state = step.state;
            let probs = g.softmax_rows(step.logits);
            let probs = g.value(probs);
            for i in 0..rows {
                if done[i] {
                    continue;
                }
                let mut tok = probs.argmax_row(i);
                if t + 1 == self.max_len && tok != tokens::EOS {
                    tok = tokens::EOS;
                    out[i].truncated = true;
                }
                out[i].tokens.push(tok);
                // Floored so a forced end token keeps a positive probability.
                out[i].token_probs.push(probs.get(i, tok).max(lit(1e-8)));
                prev[i] = tok;
                if tok == tokens::EOS {
                    done[i] = true;
                }
            }
            if done.iter().all(|&d| d) {
                break;
            }
        }
        out
    }
}
