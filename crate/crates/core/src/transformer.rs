//! Deformable encoder over the feature pyramid and the query decoder with
//! iterative reference refinement.

use rand::Rng;

use crate::attention::{DeformableAttention, MultiHeadAttention, Reference};
use crate::autograd::{Graph, Var};
use crate::config::ModelConfig;
use crate::features::FeaturePyramid;
use crate::heads::{LocalizationHead, LocalizationOutput};
use crate::nn::{FeedForward, LayerNorm};
use crate::params::ParamStore;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Pre-norm encoder layer: deformable self-attention then feed-forward.
#[derive(Debug, Clone)]
pub struct EncoderLayer {
    pub attn_norm: LayerNorm,
    pub attn: DeformableAttention,
    pub ffn_norm: LayerNorm,
    pub ffn: FeedForward,
}

impl EncoderLayer {
    fn new<T: Scalar, R: Rng + ?Sized>(store: &mut ParamStore<T>, name: &str, cfg: &ModelConfig, rng: &mut R) -> Self {
        Self {
            attn_norm: LayerNorm::new(store, &format!("{name}.attn_norm"), cfg.d_model),
            attn: DeformableAttention::new(store, &format!("{name}.attn"), cfg.d_model, cfg.heads, cfg.num_levels, cfg.points, rng),
            ffn_norm: LayerNorm::new(store, &format!("{name}.ffn_norm"), cfg.d_model),
            ffn: FeedForward::new(store, &format!("{name}.ffn"), cfg.d_model, cfg.ffn_dim, rng),
        }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, src: Var, pos: Var, refs: Var, pyramid: &FeaturePyramid) -> Var {
        let normed = self.attn_norm.forward(g, src);
        let query = g.add(normed, pos);
        let att = self.attn.forward(g, query, Reference::Point(refs), normed, &pyramid.layout);
        let src = g.add(src, att.output);
        let normed = self.ffn_norm.forward(g, src);
        let ff = self.ffn.forward(g, normed);
        g.add(src, ff)
    }
}

#[derive(Debug, Clone)]
pub struct Encoder {
    pub layers: Vec<EncoderLayer>,
}

impl Encoder {
    pub fn new<T: Scalar, R: Rng + ?Sized>(store: &mut ParamStore<T>, cfg: &ModelConfig, rng: &mut R) -> Self {
        let layers = (0..cfg.enc_layers)
            .map(|i| EncoderLayer::new(store, &format!("encoder.{i}"), cfg, rng))
            .collect();
        Self { layers }
    }

    /// Every frame of every level queries the pyramid at its own normalized
    /// position; shapes are preserved.
    pub fn encode<T: Scalar>(&self, g: &mut Graph<'_, T>, pyramid: &FeaturePyramid) -> FeaturePyramid {
        let refs = g.constant(Tensor::column(pyramid.layout.normalized_positions()));
        let mut src = pyramid.features;
        for layer in &self.layers {
            src = layer.forward(g, src, pyramid.pos, refs, pyramid);
        }
        FeaturePyramid {
            layout: pyramid.layout.clone(),
            features: src,
            pos: pyramid.pos,
        }
    }
}

/// Pre-norm decoder layer: dense query self-attention, deformable
/// cross-attention into the memory, feed-forward.
#[derive(Debug, Clone)]
pub struct DecoderLayer {
    pub self_norm: LayerNorm,
    pub self_attn: MultiHeadAttention,
    pub cross_norm: LayerNorm,
    pub cross_attn: DeformableAttention,
    pub ffn_norm: LayerNorm,
    pub ffn: FeedForward,
    pub out_norm: LayerNorm,
}

impl DecoderLayer {
    fn new<T: Scalar, R: Rng + ?Sized>(store: &mut ParamStore<T>, name: &str, cfg: &ModelConfig, rng: &mut R) -> Self {
        let d = cfg.d_model;
        Self {
            self_norm: LayerNorm::new(store, &format!("{name}.self_norm"), d),
            self_attn: MultiHeadAttention::new(store, &format!("{name}.self_attn"), d, cfg.heads, rng),
            cross_norm: LayerNorm::new(store, &format!("{name}.cross_norm"), d),
            cross_attn: DeformableAttention::new(store, &format!("{name}.cross_attn"), d, cfg.heads, cfg.num_levels, cfg.decoder_points(), rng),
            ffn_norm: LayerNorm::new(store, &format!("{name}.ffn_norm"), d),
            ffn: FeedForward::new(store, &format!("{name}.ffn"), d, cfg.ffn_dim, rng),
            out_norm: LayerNorm::new(store, &format!("{name}.out_norm"), d),
        }
    }

    /// Returns `(residual stream, normalized features for the heads)`.
    pub fn forward<T: Scalar>(
        &self,
        g: &mut Graph<'_, T>,
        tgt: Var,
        query_pos: Var,
        reference: Reference,
        memory: &FeaturePyramid,
    ) -> (Var, Var) {
        let normed = self.self_norm.forward(g, tgt);
        let qk = g.add(normed, query_pos);
        let sa = self.self_attn.forward(g, qk, qk, normed);
        let tgt = g.add(tgt, sa);
        let normed = self.cross_norm.forward(g, tgt);
        let query = g.add(normed, query_pos);
        let ca = self.cross_attn.forward(g, query, reference, memory.features, &memory.layout);
        let tgt = g.add(tgt, ca.output);
        let normed = self.ffn_norm.forward(g, tgt);
        let ff = self.ffn.forward(g, normed);
        let tgt = g.add(tgt, ff);
        let out = self.out_norm.forward(g, tgt);
        (tgt, out)
    }
}

/// How the reference of the next layer follows the localization head.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Refinement {
    /// Refined, with gradients blocked between layers.
    Detached,
    /// Refined, gradients flow through the reference chain.
    Attached,
    /// Never refined (references given from outside).
    Fixed,
}

/// Initial decoder inputs: query content, query positions and references.
#[derive(Debug, Clone, Copy)]
pub struct EventQuerySet {
    /// `N x D`.
    pub content: Var,
    /// `N x D`.
    pub pos: Var,
    pub reference: Reference,
}

/// Outputs of one decoder layer.
#[derive(Debug, Clone, Copy)]
pub struct DecoderLayerOutput {
    /// Refined queries fed to the heads, `N x D`.
    pub queries: Var,
    /// The reference this layer attended around.
    pub reference: Reference,
    pub localization: LocalizationOutput,
}

#[derive(Debug, Clone)]
pub struct Decoder {
    pub layers: Vec<DecoderLayer>,
}

impl Decoder {
    pub fn new<T: Scalar, R: Rng + ?Sized>(store: &mut ParamStore<T>, cfg: &ModelConfig, rng: &mut R) -> Self {
        Self {
            layers: (0..cfg.dec_layers)
                .map(|i| DecoderLayer::new(store, &format!("decoder.{i}"), cfg, rng))
                .collect(),
        }
    }

    /// Runs every layer; the shared localization head refines the
    /// reference after each one.
    pub fn decode<T: Scalar>(
        &self,
        g: &mut Graph<'_, T>,
        memory: &FeaturePyramid,
        queries: EventQuerySet,
        localization: &LocalizationHead,
        refinement: Refinement,
    ) -> Vec<DecoderLayerOutput> {
        let mut tgt = queries.content;
        let mut reference = queries.reference;
        let mut outputs = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let (next, out) = layer.forward(g, tgt, queries.pos, reference, memory);
            tgt = next;
            let loc = localization.forward(g, out, reference);
            outputs.push(DecoderLayerOutput {
                queries: out,
                reference,
                localization: loc,
            });
            reference = match refinement {
                Refinement::Fixed => reference,
                Refinement::Attached => next_reference(reference, &loc),
                Refinement::Detached => match next_reference(reference, &loc) {
                    Reference::Point(c) => Reference::Point(g.detach(c)),
                    Reference::Span { center, length } => Reference::Span {
                        center: g.detach(center),
                        length: g.detach(length),
                    },
                },
            };
        }
        outputs
    }
}

fn next_reference(prev: Reference, loc: &LocalizationOutput) -> Reference {
    match prev {
        Reference::Point(_) => Reference::Point(loc.center),
        Reference::Span { .. } => Reference::Span {
            center: loc.center,
            length: loc.length,
        },
    }
}
