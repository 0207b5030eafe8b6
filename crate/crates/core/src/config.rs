//! Model hyperparameters.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which recurrent captioner decodes each event query.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CaptionHeadKind {
    /// LSTM fed with the query feature and the previous word.
    Light,
    /// LSTM with deformable soft attention around the reference point.
    Dsa,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// Channels of the raw frame features (`C_in`).
    pub input_dim: usize,
    /// Fixed temporal length after rescaling (`T`).
    pub temporal_length: usize,
    /// Pyramid levels (`L`).
    pub num_levels: usize,
    /// Transformer width (`D`).
    pub d_model: usize,
    pub ffn_dim: usize,
    pub heads: usize,
    /// Sampling points per level per head (`K`).
    pub points: usize,
    pub enc_layers: usize,
    pub dec_layers: usize,
    /// Event queries (`N`).
    pub num_queries: usize,
    /// Largest count the event counter can predict.
    pub max_count: usize,
    pub vocab_size: usize,
    pub max_caption_len: usize,
    pub caption_head: CaptionHeadKind,
    pub caption_hidden: usize,
    pub word_dim: usize,
    pub norm_groups: usize,
    /// Two-component (center, length) references with fixed evenly spaced
    /// sampling keys in decoder cross-attention.
    pub weak_supervision: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            input_dim: 32,
            temporal_length: 64,
            num_levels: 4,
            d_model: 64,
            ffn_dim: 256,
            heads: 8,
            points: 4,
            enc_layers: 2,
            dec_layers: 2,
            num_queries: 10,
            max_count: 10,
            vocab_size: 64,
            max_caption_len: 20,
            caption_head: CaptionHeadKind::Light,
            caption_hidden: 64,
            word_dim: 32,
            norm_groups: 8,
            weak_supervision: false,
        }
    }
}

/// Sampling keys per level used by the weakly supervised decoder.
pub const WEAK_POINTS: usize = 4;

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        let positive = [
            ("input_dim", self.input_dim),
            ("num_levels", self.num_levels),
            ("d_model", self.d_model),
            ("ffn_dim", self.ffn_dim),
            ("heads", self.heads),
            ("points", self.points),
            ("dec_layers", self.dec_layers),
            ("num_queries", self.num_queries),
            ("max_count", self.max_count),
            ("max_caption_len", self.max_caption_len),
            ("caption_hidden", self.caption_hidden),
            ("word_dim", self.word_dim),
            ("norm_groups", self.norm_groups),
        ];
        for (name, v) in positive {
            if v == 0 {
                return fail(format!("{name} must be positive"));
            }
        }
        if self.temporal_length < 2 {
            return fail("temporal_length must be at least 2".into());
        }
        if self.num_levels > 16 || self.temporal_length < 1 << (self.num_levels - 1) {
            return fail(format!(
                "temporal_length {} too short for {} pyramid levels",
                self.temporal_length, self.num_levels
            ));
        }
        if !self.d_model.is_multiple_of(2) {
            return fail("d_model must be even for sinusoidal positions".into());
        }
        if !self.d_model.is_multiple_of(self.heads) {
            return fail(format!("d_model {} not divisible by heads {}", self.d_model, self.heads));
        }
        if !self.d_model.is_multiple_of(self.norm_groups) {
            return fail(format!(
                "d_model {} not divisible by norm_groups {}",
                self.d_model, self.norm_groups
            ));
        }
        if self.vocab_size < 5 {
            return fail("vocab_size must cover the four reserved tokens plus words".into());
        }
        Ok(())
    }

    /// Sampling points per level in decoder cross-attention.
    pub fn decoder_points(&self) -> usize {
        if self.weak_supervision {
            WEAK_POINTS
        } else {
            self.points
        }
    }

    /// Row counts of the pyramid levels: `T, ceil(T/2), ...`.
    pub fn level_lengths(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.num_levels);
        let mut len = self.temporal_length;
        for _ in 0..self.num_levels {
            out.push(len);
            len = len.div_ceil(2);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_is_valid_and_halves() {
        let cfg = ModelConfig::default();
        cfg.validate().unwrap();
        assert_eq!(cfg.level_lengths(), vec![64, 32, 16, 8]);
    }

    #[test]
    fn rejects_bad_shapes() {
        let cfg = ModelConfig {
            temporal_length: 4,
            num_levels: 4,
            ..Default::default()
        };
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        let cfg = ModelConfig {
            heads: 5,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
        let cfg = ModelConfig {
            d_model: 63,
            heads: 1,
            norm_groups: 1,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn unknown_keys_rejected() {
        let err = serde_json::from_str::<ModelConfig>(r#"{"d_model": 64, "bogus": 1}"#);
        assert!(err.is_err());
    }
}
