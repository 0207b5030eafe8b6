//! The full dense captioner: pyramid, encoder, query decoder and heads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::attention::Reference;
use crate::autograd::{Graph, Var};
use crate::checkpoint::Checkpoint;
use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::features::{rescale_temporal, FeaturePyramid, FrameFeatureSequence, PyramidBuilder};
use crate::geometry::Segment;
use crate::heads::{CaptionHead, CaptionHypothesis, CountHead, CountPrediction, DsaContext, EventDetection, LocalizationHead};
use crate::loss::{caption_only_loss, layer_loss, sum_layers, LayerLoss, LayerTargets, LossWeights};
use crate::matching::{caption_match_cost, hungarian, match_cost, MatchCostConfig, Matching};
use crate::nn::Linear;
use crate::params::{uniform, ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::transformer::{Decoder, DecoderLayerOutput, Encoder, EventQuerySet, Refinement};

/// Ground-truth events of one video, segments normalized to `[0,1]`,
/// captions as token ids ending with the end token.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth<T> {
    pub segments: Vec<Segment<T>>,
    pub captions: Vec<Vec<usize>>,
}

impl<T> GroundTruth<T> {
    pub fn len(&self) -> usize {
        self.captions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.captions.is_empty()
    }
}

/// Loss weights together with the matching costs.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Objective {
    pub weights: LossWeights,
    pub matching: MatchCostConfig,
}

/// Module tree; parameters live in the owning [`DenseCaptioner`]'s store.
#[derive(Debug, Clone)]
pub struct Network {
    pub pyramid: PyramidBuilder,
    pub encoder: Encoder,
    pub decoder: Decoder,
    pub localization: LocalizationHead,
    pub caption: CaptionHead,
    pub count: CountHead,
    pub query_content: ParamId,
    pub query_pos: ParamId,
    /// Query position to initial reference (center, plus length when weak).
    pub reference_init: Linear,
    pub proposal_content: Linear,
    pub proposal_pos: Linear,
    pub weak: bool,
    pub num_queries: usize,
    pub max_count: usize,
}

/// Everything a forward pass produces on the graph.
#[derive(Debug, Clone)]
pub struct ForwardOutput {
    pub memory: FeaturePyramid,
    pub layers: Vec<DecoderLayerOutput>,
    /// Count logits per decoder layer.
    pub count_logits: Vec<Var>,
}

/// Set loss over all layers and the matchings it used.
#[derive(Debug, Clone)]
pub struct SetLoss<T> {
    pub loss: LayerLoss,
    pub matchings: Vec<Matching<T>>,
}

/// Per-query outputs of the last layer before ranking.
#[derive(Debug, Clone, PartialEq)]
pub struct RawPrediction<T> {
    pub detections: Vec<EventDetection<T>>,
    pub captions: Vec<CaptionHypothesis<T>>,
    pub count: CountPrediction<T>,
}

impl Network {
    pub fn new<T: Scalar, R: rand::Rng + ?Sized>(store: &mut ParamStore<T>, cfg: &ModelConfig, rng: &mut R) -> Self {
        let d = cfg.d_model;
        let weak = cfg.weak_supervision;
        let pyramid = PyramidBuilder::new(store, cfg, rng);
        let encoder = Encoder::new(store, cfg, rng);
        let decoder = Decoder::new(store, cfg, rng);
        let localization = LocalizationHead::new(store, d, rng);
        let caption = CaptionHead::new(store, cfg, rng);
        let count = CountHead::new(store, d, cfg.max_count, rng);
        let query_content = store.add("queries.content", uniform(rng, cfg.num_queries, d, 1.0));
        let query_pos = store.add("queries.pos", uniform(rng, cfg.num_queries, d, 1.0));
        let reference_init = Linear::new(store, "queries.reference", d, if weak { 2 } else { 1 }, rng);
        let proposal_content = Linear::new(store, "proposals.content", 2, d, rng);
        let proposal_pos = Linear::new(store, "proposals.pos", 2, d, rng);
        Self {
            pyramid,
            encoder,
            decoder,
            localization,
            caption,
            count,
            query_content,
            query_pos,
            reference_init,
            proposal_content,
            proposal_pos,
            weak,
            num_queries: cfg.num_queries,
            max_count: cfg.max_count,
        }
    }

    fn refinement(&self) -> Refinement {
        if self.weak {
            Refinement::Attached
        } else {
            Refinement::Detached
        }
    }

    /// Pyramid plus encoder over `frames` (already at the model length).
    pub fn encode<T: Scalar>(&self, g: &mut Graph<'_, T>, frames: &Tensor<T>) -> Result<FeaturePyramid> {
        let x = g.constant(frames.clone());
        let pyramid = self.pyramid.build(g, x)?;
        Ok(self.encoder.encode(g, &pyramid))
    }

    /// Learned event queries with their initial references.
    pub fn event_queries<T: Scalar>(&self, g: &mut Graph<'_, T>) -> EventQuerySet {
        let content = g.param(self.query_content);
        let pos = g.param(self.query_pos);
        let r = self.reference_init.forward(g, pos);
        let r = g.sigmoid(r);
        let reference = if self.weak {
            Reference::Span {
                center: g.slice_cols(r, 0, 1),
                length: g.slice_cols(r, 1, 1),
            }
        } else {
            Reference::Point(r)
        };
        EventQuerySet { content, pos, reference }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, frames: &Tensor<T>) -> Result<ForwardOutput> {
        let memory = self.encode(g, frames)?;
        let queries = self.event_queries(g);
        let layers = self.decoder.decode(g, &memory, queries, &self.localization, self.refinement());
        let count_logits = layers.iter().map(|l| self.count.forward(g, l.queries)).collect();
        Ok(ForwardOutput {
            memory,
            layers,
            count_logits,
        })
    }

    fn caption_context<T: Scalar>(&self, g: &mut Graph<'_, T>, memory: &FeaturePyramid, refs: Var) -> Option<DsaContext> {
        self.caption.prepare(g, memory.features, &memory.layout, refs)
    }

    /// Matching of one layer, from localization or caption costs.
    fn match_layer<T: Scalar>(
        &self,
        g: &Graph<'_, T>,
        memory: &FeaturePyramid,
        layer: &DecoderLayerOutput,
        gt: &GroundTruth<T>,
        cfg: &MatchCostConfig,
    ) -> Result<Matching<T>> {
        if gt.is_empty() {
            return Ok(Matching {
                pairs: Vec::new(),
                total_cost: T::zero(),
            });
        }
        let dets = layer.localization.detections(g);
        let cost = if self.weak {
            let conf: Vec<T> = dets.iter().map(|d| d.loc_confidence).collect();
            let (loglik, lengths) = self.caption_loglik(g, memory, layer, &gt.captions);
            caption_match_cost(&loglik, &lengths, &conf, cfg)
        } else {
            match_cost(&dets, &gt.segments, cfg)
        };
        hungarian(&cost)
    }

    /// `N x G` summed token log-probabilities of every caption under every
    /// query, computed without gradient.
    fn caption_loglik<T: Scalar>(
        &self,
        g: &Graph<'_, T>,
        memory: &FeaturePyramid,
        layer: &DecoderLayerOutput,
        captions: &[Vec<usize>],
    ) -> (Tensor<T>, Vec<usize>) {
        let n = g.shape(layer.queries).0;
        let count = captions.len();
        let mut h = Graph::inference(g.params());
        let q = h.constant(g.value(layer.queries).clone());
        let refs = h.constant(g.value(layer.reference.center()).clone());
        let mem = FeaturePyramid {
            layout: memory.layout.clone(),
            features: h.constant(g.value(memory.features).clone()),
            pos: h.constant(g.value(memory.pos).clone()),
        };
        let rows: Vec<usize> = (0..n).flat_map(|j| std::iter::repeat_n(j, count)).collect();
        let q = h.gather_rows(q, rows.clone());
        let refs = h.gather_rows(refs, rows);
        let ctx = self.caption_context(&mut h, &mem, refs);
        let targets: Vec<Vec<usize>> = (0..n).flat_map(|_| captions.iter().cloned()).collect();
        let tf = self.caption.teacher_force(&mut h, q, &targets, ctx.as_ref());
        let sums = h.value(tf.token_logprobs);
        let mut out = Tensor::zeros(n, count);
        for j in 0..n {
            for c in 0..count {
                out.set(j, c, sums.row(j * count + c).iter().copied().sum());
            }
        }
        (out, captions.iter().map(Vec::len).collect())
    }

    /// Matched-caption NLL (`|matching| x 1`) for one layer.
    fn matched_caption_nll<T: Scalar>(
        &self,
        g: &mut Graph<'_, T>,
        memory: &FeaturePyramid,
        layer: &DecoderLayerOutput,
        matching: &Matching<T>,
        gt: &GroundTruth<T>,
    ) -> Option<Var> {
        if matching.is_empty() {
            return None;
        }
        let queries = matching.queries();
        let q = g.gather_rows(layer.queries, queries.clone());
        let refs = g.gather_rows(layer.reference.center(), queries);
        let ctx = self.caption_context(g, memory, refs);
        let targets: Vec<Vec<usize>> = matching.pairs.iter().map(|&(_, j)| gt.captions[j].clone()).collect();
        Some(self.caption.teacher_force(g, q, &targets, ctx.as_ref()).mean_nll)
    }

    /// Set loss summed over decoder layers, each with its own matching.
    pub fn set_loss<T: Scalar>(&self, g: &mut Graph<'_, T>, out: &ForwardOutput, gt: &GroundTruth<T>, obj: &Objective) -> Result<SetLoss<T>> {
        if gt.segments.len() != gt.captions.len() {
            return Err(Error::Input("one caption per ground-truth segment required".into()));
        }
        if gt.captions.iter().any(Vec::is_empty) {
            return Err(Error::Input("empty ground-truth caption".into()));
        }
        let mut losses = Vec::with_capacity(out.layers.len());
        let mut matchings = Vec::with_capacity(out.layers.len());
        for (layer, &count_logits) in out.layers.iter().zip(&out.count_logits) {
            let matching = self.match_layer(g, &out.memory, layer, gt, &obj.matching)?;
            let nll = self.matched_caption_nll(g, &out.memory, layer, &matching, gt);
            let targets = LayerTargets {
                matching: &matching,
                segments: if self.weak { None } else { Some(&gt.segments) },
                num_events: gt.len(),
                max_count: self.max_count,
            };
            losses.push(layer_loss(g, &layer.localization, count_logits, nll, targets, &obj.weights));
            matchings.push(matching);
        }
        Ok(SetLoss {
            loss: sum_layers(g, &losses),
            matchings,
        })
    }

    /// Last-layer detections, greedy captions and count.
    pub fn predict<T: Scalar>(&self, g: &mut Graph<'_, T>, frames: &Tensor<T>) -> Result<RawPrediction<T>> {
        let out = self.forward(g, frames)?;
        let last = *out.layers.last().ok_or_else(|| Error::Config("model has no decoder layers".into()))?;
        let detections = last.localization.detections(g);
        let ctx = self.caption_context(g, &out.memory, last.reference.center());
        let captions = self.caption.greedy(g, last.queries, ctx.as_ref());
        let logits = *out.count_logits.last().expect("count logits per layer");
        let count = CountPrediction::from_logits(g.value(logits).data());
        Ok(RawPrediction {
            detections,
            captions,
            count,
        })
    }

    /// Decoder outputs for given proposals (at most `num_queries`): queries
    /// embed `(center, length)`, references are the proposal centers.
    pub fn decode_proposals<T: Scalar>(&self, g: &mut Graph<'_, T>, memory: &FeaturePyramid, proposals: &[Segment<T>]) -> Result<Vec<DecoderLayerOutput>> {
        if proposals.is_empty() {
            return Err(Error::Input("no proposals given".into()));
        }
        if proposals.len() > self.num_queries {
            return Err(Error::Input(format!(
                "{} proposals exceed the query capacity {}",
                proposals.len(),
                self.num_queries
            )));
        }
        let mut geo = Tensor::zeros(proposals.len(), 2);
        for (i, p) in proposals.iter().enumerate() {
            p.validate().map_err(Error::from)?;
            geo.set(i, 0, p.center());
            geo.set(i, 1, p.length());
        }
        let geo = g.constant(geo);
        let content = self.proposal_content.forward(g, geo);
        let pos = self.proposal_pos.forward(g, geo);
        let center = g.slice_cols(geo, 0, 1);
        let reference = if self.weak {
            Reference::Span {
                center,
                length: g.slice_cols(geo, 1, 1),
            }
        } else {
            Reference::Point(center)
        };
        let queries = EventQuerySet { content, pos, reference };
        Ok(self.decoder.decode(g, memory, queries, &self.localization, Refinement::Fixed))
    }

    /// Caption-only loss over all layers for proposals with known captions.
    pub fn paragraph_loss<T: Scalar>(
        &self,
        g: &mut Graph<'_, T>,
        frames: &Tensor<T>,
        proposals: &[Segment<T>],
        captions: &[Vec<usize>],
        weights: &LossWeights,
    ) -> Result<LayerLoss> {
        if proposals.len() != captions.len() {
            return Err(Error::Input("one caption per proposal required".into()));
        }
        let memory = self.encode(g, frames)?;
        let mut losses = Vec::new();
        for (chunk_p, chunk_c) in proposals.chunks(self.num_queries).zip(captions.chunks(self.num_queries)) {
            let layers = self.decode_proposals(g, &memory, chunk_p)?;
            for layer in &layers {
                let ctx = self.caption_context(g, &memory, layer.reference.center());
                let tf = self.caption.teacher_force(g, layer.queries, chunk_c, ctx.as_ref());
                losses.push(caption_only_loss(g, tf.mean_nll, weights));
            }
        }
        Ok(sum_layers(g, &losses))
    }

    /// One greedy caption per proposal, in input order.
    pub fn paragraph_captions<T: Scalar>(&self, g: &mut Graph<'_, T>, frames: &Tensor<T>, proposals: &[Segment<T>]) -> Result<Vec<CaptionHypothesis<T>>> {
        if proposals.is_empty() {
            return Err(Error::Input("no proposals given".into()));
        }
        let memory = self.encode(g, frames)?;
        let mut out = Vec::with_capacity(proposals.len());
        for chunk in proposals.chunks(self.num_queries) {
            let layers = self.decode_proposals(g, &memory, chunk)?;
            let last = layers.last().ok_or_else(|| Error::Config("model has no decoder layers".into()))?;
            let ctx = self.caption_context(g, &memory, last.reference.center());
            out.extend(self.caption.greedy(g, last.queries, ctx.as_ref()));
        }
        Ok(out)
    }
}

/// A model configuration, its modules and its parameters.
#[derive(Debug, Clone)]
pub struct DenseCaptioner<T: Scalar> {
    pub config: ModelConfig,
    pub network: Network,
    pub params: ParamStore<T>,
}

impl<T: Scalar> DenseCaptioner<T> {
    /// Fresh model with parameters drawn from `seed`.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let network = Network::new(&mut params, &config, &mut rng);
        Ok(Self { config, network, params })
    }

    /// Rescales raw frames to the model's temporal length.
    pub fn prepare_frames(&self, seq: &FrameFeatureSequence<T>) -> Result<Tensor<T>> {
        if seq.features.cols() != self.config.input_dim {
            return Err(Error::Input(format!(
                "feature width {} does not match the model input width {}",
                seq.features.cols(),
                self.config.input_dim
            )));
        }
        rescale_temporal(&seq.features, self.config.temporal_length)
    }

    pub fn predict(&self, frames: &Tensor<T>) -> Result<RawPrediction<T>> {
        let mut g = Graph::inference(&self.params);
        self.network.predict(&mut g, frames)
    }

    pub fn paragraph_captions(&self, frames: &Tensor<T>, proposals: &[Segment<T>]) -> Result<Vec<CaptionHypothesis<T>>> {
        let mut g = Graph::inference(&self.params);
        self.network.paragraph_captions(&mut g, frames, proposals)
    }
}

/// Tensor name prefix of model parameters inside a checkpoint.
pub const PARAM_PREFIX: &str = "param/";

impl<T: Scalar> DenseCaptioner<T> {
    /// Checkpoint with the model config under `meta["model"]`; `extra`
    /// entries are merged into the metadata object.
    pub fn to_checkpoint(&self, extra: serde_json::Map<String, serde_json::Value>) -> Result<Checkpoint<T>> {
        let mut meta = extra;
        meta.insert("model".into(), serde_json::to_value(&self.config)?);
        let mut ck = Checkpoint::new(serde_json::Value::Object(meta));
        for (_, name, t) in self.params.iter() {
            ck.push(format!("{PARAM_PREFIX}{name}"), t.clone());
        }
        Ok(ck)
    }

    /// Rebuilds the model from `meta["model"]` and the stored parameters.
    pub fn from_checkpoint(ck: &Checkpoint<T>) -> Result<Self> {
        let cfg = ck
            .meta
            .get("model")
            .ok_or_else(|| Error::Checkpoint("checkpoint has no model config".into()))?;
        let config: ModelConfig = serde_json::from_value(cfg.clone())?;
        let mut model = Self::new(config, 0)?;
        let ids: Vec<ParamId> = model.params.ids().collect();
        for id in ids {
            let shape = model.params.get(id).shape();
            let name = format!("{PARAM_PREFIX}{}", model.params.name(id));
            *model.params.get_mut(id) = ck.take(&name, shape)?;
        }
        Ok(model)
    }
}
