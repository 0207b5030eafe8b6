//! Frame features to a multi-scale temporal pyramid with positions.

use std::f64::consts::PI;
use std::sync::Arc;

use rand::Rng;

use crate::autograd::{Graph, LevelLayout, Var};
use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::nn::{GroupNorm, Linear};
use crate::params::{uniform, ParamId, ParamStore};
use crate::scalar::{lit, Scalar};
use crate::tensor::Tensor;

/// Raw per-frame features of one video, `T_raw x C_in`.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameFeatureSequence<T> {
    pub features: Tensor<T>,
    pub duration_seconds: f64,
}

impl<T: Scalar> FrameFeatureSequence<T> {
    pub fn new(features: Tensor<T>, duration_seconds: f64) -> Result<Self> {
        if features.rows() == 0 || features.cols() == 0 {
            return Err(Error::Input("empty feature sequence".into()));
        }
        if !features.is_finite() {
            return Err(Error::NonFinite("frame features"));
        }
        if !(duration_seconds.is_finite() && duration_seconds > 0.0) {
            return Err(Error::Input(format!("duration must be positive, got {duration_seconds}")));
        }
        Ok(Self {
            features,
            duration_seconds,
        })
    }

    pub fn len(&self) -> usize {
        self.features.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.features.rows() == 0
    }
}

/// Linearly resamples the temporal axis to `len` rows, first and last rows
/// aligned. Equal lengths return the input unchanged.
pub fn rescale_temporal<T: Scalar>(features: &Tensor<T>, len: usize) -> Result<Tensor<T>> {
    let (raw, c) = features.shape();
    if raw == 0 {
        return Err(Error::Input("cannot rescale an empty sequence".into()));
    }
    if len < 2 {
        return Err(Error::Config(format!("rescale length must be at least 2, got {len}")));
    }
    if raw == len {
        return Ok(features.clone());
    }
    let mut out = Tensor::zeros(len, c);
    if raw == 1 {
        for t in 0..len {
            out.row_mut(t).copy_from_slice(features.row(0));
        }
        return Ok(out);
    }
    let scale = (raw - 1) as f64 / (len - 1) as f64;
    for t in 0..len {
        let x = t as f64 * scale;
        let i0 = (x.floor() as usize).min(raw - 2);
        let w1: T = lit(x - i0 as f64);
        let w0 = T::one() - w1;
        let (r0, r1) = (features.row(i0), features.row(i0 + 1));
        for ((o, &a), &b) in out.row_mut(t).iter_mut().zip(r0).zip(r1) {
            *o = w0 * a + w1 * b;
        }
    }
    Ok(out)
}

/// Fixed sinusoidal embedding of the normalized positions `i / (len - 1)`:
/// the first `d/2` columns are sines, the rest cosines.
pub fn sinusoidal_embedding<T: Scalar>(len: usize, d: usize) -> Result<Tensor<T>> {
    if !d.is_multiple_of(2) || d == 0 {
        return Err(Error::Config(format!("positional width must be even, got {d}")));
    }
    let half = d / 2;
    let mut out = Tensor::zeros(len, d);
    for t in 0..len {
        let p = if len > 1 { t as f64 / (len - 1) as f64 } else { 0.0 };
        let angle = 2.0 * PI * p;
        for i in 0..half {
            let freq = 10000f64.powf(2.0 * i as f64 / d as f64);
            out.set(t, i, lit((angle / freq).sin()));
            out.set(t, half + i, lit((angle / freq).cos()));
        }
    }
    Ok(out)
}

/// Stacked pyramid levels living on a graph.
#[derive(Debug, Clone)]
pub struct FeaturePyramid {
    pub layout: Arc<LevelLayout>,
    /// `(sum T_l) x D`, levels stacked top to bottom.
    pub features: Var,
    /// Positional plus level embedding, same shape as `features`.
    pub pos: Var,
}

impl FeaturePyramid {
    pub fn level<T: Scalar>(&self, g: &mut Graph<'_, T>, l: usize) -> Var {
        g.slice_rows(self.features, self.layout.start(l), self.layout.length(l))
    }
}

/// Input projection, stride-2 temporal convolutions and level embeddings.
#[derive(Debug, Clone)]
pub struct PyramidBuilder {
    pub input_proj: Linear,
    pub input_norm: GroupNorm,
    /// One `(conv as Linear over kernel-3 unfolds, norm)` per extra level.
    pub downsample: Vec<(Linear, GroupNorm)>,
    pub level_embed: ParamId,
    pub layout: Arc<LevelLayout>,
    d_model: usize,
}

impl PyramidBuilder {
    pub fn new<T: Scalar, R: Rng + ?Sized>(store: &mut ParamStore<T>, cfg: &ModelConfig, rng: &mut R) -> Self {
        let d = cfg.d_model;
        let input_proj = Linear::new(store, "pyramid.input_proj", cfg.input_dim, d, rng);
        let input_norm = GroupNorm::new(store, "pyramid.input_norm", d, cfg.norm_groups);
        let downsample = (1..cfg.num_levels)
            .map(|l| {
                (
                    Linear::new(store, &format!("pyramid.conv.{l}"), 3 * d, d, rng),
                    GroupNorm::new(store, &format!("pyramid.conv_norm.{l}"), d, cfg.norm_groups),
                )
            })
            .collect();
        let level_embed = store.add("pyramid.level_embed", uniform(rng, cfg.num_levels, d, 0.1));
        Self {
            input_proj,
            input_norm,
            downsample,
            level_embed,
            layout: Arc::new(LevelLayout::new(cfg.level_lengths())),
            d_model: d,
        }
    }

    /// Builds the pyramid from `frames: T x C_in` (already rescaled).
    pub fn build<T: Scalar>(&self, g: &mut Graph<'_, T>, frames: Var) -> Result<FeaturePyramid> {
        let (rows, cols) = g.shape(frames);
        if rows != self.layout.length(0) {
            return Err(Error::Input(format!(
                "expected {} frames after rescaling, got {rows}",
                self.layout.length(0)
            )));
        }
        if cols != self.input_proj.in_dim {
            return Err(Error::Input(format!(
                "expected {} feature channels, got {cols}",
                self.input_proj.in_dim
            )));
        }
        if !g.value(frames).is_finite() {
            return Err(Error::NonFinite("pyramid input"));
        }
        let x = self.input_proj.forward(g, frames);
        let mut level = self.input_norm.forward(g, x);
        let mut levels = vec![level];
        for (conv, norm) in &self.downsample {
            let cols = g.unfold1d(level, 3, 2, 1);
            let y = conv.forward(g, cols);
            level = norm.forward(g, y);
            levels.push(level);
        }
        let features = if levels.len() == 1 {
            levels[0]
        } else {
            g.concat_rows(&levels)
        };
        let pos = self.positions(g)?;
        Ok(FeaturePyramid {
            layout: self.layout.clone(),
            features,
            pos,
        })
    }

    /// Positional embedding of level `l`: sinusoid plus the level's
    /// learned embedding on every row.
    pub fn positional_embedding<T: Scalar>(&self, g: &mut Graph<'_, T>, l: usize) -> Result<Var> {
        let len = self.layout.length(l);
        let sin = g.constant(sinusoidal_embedding(len, self.d_model)?);
        let table = g.param(self.level_embed);
        let lvl = g.gather_rows(table, vec![l; len]);
        Ok(g.add(sin, lvl))
    }

    fn positions<T: Scalar>(&self, g: &mut Graph<'_, T>) -> Result<Var> {
        let parts = (0..self.layout.num_levels())
            .map(|l| self.positional_embedding(g, l))
            .collect::<Result<Vec<_>>>()?;
        Ok(if parts.len() == 1 { parts[0] } else { g.concat_rows(&parts) })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn rescale_identity_is_exact() {
        let x = Tensor::from_vec(3, 2, vec![0.1f32, 0.7, -1.3, 2.2, 5.5, 0.0]);
        assert_eq!(rescale_temporal(&x, 3).unwrap(), x);
    }

    #[test]
    fn rescale_two_to_three_midpoint() {
        let x = Tensor::from_vec(2, 2, vec![1.0f64, 4.0, 3.0, -2.0]);
        let y = rescale_temporal(&x, 3).unwrap();
        assert_eq!(y.row(0), &[1.0, 4.0]);
        assert_eq!(y.row(1), &[2.0, 1.0]);
        assert_eq!(y.row(2), &[3.0, -2.0]);
    }

    #[test]
    fn rescale_errors() {
        let empty = Tensor::<f32>::zeros(0, 3);
        assert!(matches!(rescale_temporal(&empty, 4), Err(Error::Input(_))));
        let one = Tensor::<f32>::zeros(2, 3);
        assert!(matches!(rescale_temporal(&one, 1), Err(Error::Config(_))));
    }

    #[test]
    fn sinusoid_row_zero() {
        let e = sinusoidal_embedding::<f64>(5, 8).unwrap();
        assert_eq!(&e.row(0)[..4], &[0.0; 4]);
        assert_eq!(&e.row(0)[4..], &[1.0; 4]);
        assert!(sinusoidal_embedding::<f64>(5, 7).is_err());
    }

    #[test]
    fn sequence_validation() {
        assert!(FrameFeatureSequence::new(Tensor::<f32>::zeros(0, 4), 1.0).is_err());
        let nan = Tensor::from_vec(1, 2, vec![f32::NAN, 0.0]);
        assert!(matches!(FrameFeatureSequence::new(nan, 1.0), Err(Error::NonFinite(_))));
        assert!(FrameFeatureSequence::new(Tensor::<f32>::zeros(2, 2), 0.0).is_err());
    }

    fn builder(levels: usize, t: usize) -> (ParamStore<f64>, PyramidBuilder) {
        let cfg = ModelConfig {
            input_dim: 3,
            temporal_length: t,
            num_levels: levels,
            d_model: 8,
            heads: 2,
            norm_groups: 2,
            ..Default::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::new();
        let b = PyramidBuilder::new(&mut store, &cfg, &mut rng);
        (store, b)
    }

    #[test]
    fn level_sizes_follow_halving() {
        let (store, b) = builder(4, 64);
        let mut g = Graph::inference(&store);
        let frames = g.constant(Tensor::full(64, 3, 0.5));
        let p = b.build(&mut g, frames).unwrap();
        assert_eq!(p.layout.lengths(), &[64, 32, 16, 8]);
        assert_eq!(g.shape(p.features), (120, 8));
        assert_eq!(g.shape(p.pos), (120, 8));

        let (store, b) = builder(1, 10);
        let mut g = Graph::inference(&store);
        let frames = g.constant(Tensor::full(10, 3, 0.5));
        let p = b.build(&mut g, frames).unwrap();
        assert_eq!(p.layout.lengths(), &[10]);
    }

    #[test]
    fn zero_convolutions_give_zero_levels() {
        let (mut store, b) = builder(3, 16);
        for (conv, _) in &b.downsample {
            store.get_mut(conv.weight).data_mut().fill(0.0);
            store.get_mut(conv.bias).data_mut().fill(0.0);
        }
        let mut g = Graph::inference(&store);
        let frames: Vec<f64> = (0..48).map(|i| (i as f64 * 0.3).sin()).collect();
        let frames = g.constant(Tensor::from_vec(16, 3, frames));
        let p = b.build(&mut g, frames).unwrap();
        let feats = g.value(p.features);
        for r in 16..feats.rows() {
            assert!(feats.row(r).iter().all(|&v| v == 0.0));
        }
        assert!(feats.row(0).iter().any(|&v| v != 0.0));
    }

    #[test]
    fn level_embeddings_shift_positions() {
        let (store, b) = builder(2, 9);
        let mut g = Graph::inference(&store);
        let p0 = b.positional_embedding(&mut g, 0).unwrap();
        let p1 = b.positional_embedding(&mut g, 1).unwrap();
        // normalized position 0.5: row 4 of 9, row 2 of 5
        let table = store.get(b.level_embed);
        for c in 0..8 {
            let diff = g.value(p1).get(2, c) - g.value(p0).get(4, c);
            let expect = table.get(1, c) - table.get(0, c);
            assert!((diff - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_wrong_frame_count() {
        let (store, b) = builder(2, 8);
        let mut g = Graph::inference(&store);
        let frames = g.constant(Tensor::zeros(7, 3));
        assert!(b.build(&mut g, frames).is_err());
    }
}
