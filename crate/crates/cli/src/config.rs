//! Run configuration: one TOML file, every section optional, unknown keys
//! rejected. Command-line flags override file values.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use densecap_core::inference::RankingConfig;
use densecap_core::loss::LossWeights;
use densecap_core::matching::MatchCostConfig;
use densecap_core::optim::AdamConfig;
use densecap_core::ModelConfig;
use densecap_data::SynthConfig;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Videos whose gradients are summed per optimizer step.
    pub batch_size: usize,
    pub optimizer: AdamConfig,
    /// Validate (and maybe checkpoint) every this many epochs.
    pub eval_every: usize,
    /// Videos held out from the end of the training corpus when no
    /// validation corpus is given.
    pub val_videos: usize,
    /// Epochs fitting the proposal embeddings used by paragraph mode, run
    /// after the main training with every other parameter frozen.
    pub paragraph_epochs: usize,
    pub paragraph_learning_rate: f64,
    pub augment: AugmentConfig,
}

/// Label-preserving perturbations applied to training videos, drawn anew
/// for every (epoch, video).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentConfig {
    /// Standard deviation of Gaussian noise added to the rescaled frames.
    pub feature_noise: f64,
    /// Probability of reversing time (frames and segments).
    pub flip_probability: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            feature_noise: 0.0,
            flip_probability: 0.0,
        }
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 1,
            optimizer: AdamConfig::default(),
            eval_every: 1,
            val_videos: 0,
            paragraph_epochs: 0,
            paragraph_learning_rate: 1e-3,
            augment: AugmentConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsConfig {
    /// Training corpus directory.
    pub corpus: Option<PathBuf>,
    pub val_corpus: Option<PathBuf>,
    /// Run output directory (checkpoints, logs) or output file, by command.
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    /// Single-threaded numerics.
    pub deterministic: bool,
    /// Videos produced by `generate`.
    pub videos: usize,
    pub model: ModelConfig,
    pub synth: SynthConfig,
    pub train: TrainConfig,
    pub loss: LossWeights,
    pub matching: MatchCostConfig,
    pub ranking: RankingConfig,
    pub paths: PathsConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            deterministic: false,
            videos: 500,
            model: ModelConfig::default(),
            synth: SynthConfig::default(),
            train: TrainConfig::default(),
            loss: LossWeights::default(),
            matching: MatchCostConfig::default(),
            ranking: RankingConfig::default(),
            paths: PathsConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text)?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        Self::from_toml(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("run config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.optimizer.validate()?;
        self.loss.validate()?;
        self.matching.validate()?;
        self.ranking.validate()?;
        self.synth.validate()?;
        if self.train.batch_size == 0 {
            bail!("train.batch_size must be positive");
        }
        if self.train.eval_every == 0 {
            bail!("train.eval_every must be positive");
        }
        if !(self.train.paragraph_learning_rate > 0.0 && self.train.paragraph_learning_rate.is_finite()) {
            bail!("train.paragraph_learning_rate must be positive");
        }
        let a = self.train.augment;
        if !(a.feature_noise >= 0.0 && a.feature_noise.is_finite()) {
            bail!("train.augment.feature_noise must be finite and non-negative");
        }
        if !(0.0..=1.0).contains(&a.flip_probability) {
            bail!("train.augment.flip_probability must be in [0, 1]");
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trips_through_toml() {
        let mut cfg = RunConfig::default();
        cfg.seed = 9;
        cfg.train.epochs = 3;
        cfg.paths.corpus = Some("data/train".into());
        let back = RunConfig::from_toml(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(RunConfig::from_toml("sed = 3").is_err());
        assert!(RunConfig::from_toml("[model]\nd_modle = 3").is_err());
        let cfg = RunConfig::from_toml("[model]\nd_model = 32\n[train.optimizer]\nlearning_rate = 0.001").unwrap();
        assert_eq!(cfg.model.d_model, 32);
        assert_eq!(cfg.train.optimizer.learning_rate, 1e-3);
        assert_eq!(cfg.model.heads, ModelConfig::default().heads);
    }
}
