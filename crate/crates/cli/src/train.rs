//! Training loop: one optimizer step per mini-batch of videos, validation
//! every few epochs, best-by-F1 and resumable last checkpoints, and a
//! JSON-lines log.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use densecap_core::autograd::Graph;
use densecap_core::checkpoint::Checkpoint;
use densecap_core::loss::LossComponents;
use densecap_core::model::Objective;
use densecap_core::optim::{Adam, AdamConfig};
use densecap_core::params::Gradients;
use densecap_core::DenseCaptioner32;
use densecap_data::Vocabulary;
use rand::seq::SliceRandom;
use densecap_core::geometry::Segment;
use densecap_core::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Normal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::config::{AugmentConfig, RunConfig};
use crate::corpus::Sample;
use crate::predict::Predictor;
use crate::validate::{validate, Validation};

pub const BEST_CHECKPOINT: &str = "best.ckpt";
pub const LAST_CHECKPOINT: &str = "last.ckpt";
pub const LOG_FILE: &str = "train_log.jsonl";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValSummary {
    pub f1: f64,
    pub avg_recall: f64,
    pub avg_precision: f64,
    pub count_accuracy: f64,
    pub cider: f64,
    pub bleu4: f64,
}

impl From<&Validation> for ValSummary {
    fn from(v: &Validation) -> Self {
        let l = &v.report.localization;
        Self {
            f1: l.f1,
            avg_recall: l.avg_recall,
            avg_precision: l.avg_precision,
            count_accuracy: v.count_accuracy,
            cider: v.report.cider,
            bleu4: v.report.bleu4,
        }
    }
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub stage: String,
    pub epoch: usize,
    pub steps: u64,
    /// Per-video means.
    pub loss: LossComponents,
    pub grad_norm: f64,
    pub val: Option<ValSummary>,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub epochs: usize,
    pub best_epoch: Option<usize>,
    pub best_f1: Option<f64>,
    pub final_loss: f64,
    pub log: Vec<EpochLog>,
}

/// Where a run writes its files.
#[derive(Debug, Clone)]
pub struct RunDir {
    pub root: PathBuf,
}

impl RunDir {
    pub fn new(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        std::fs::create_dir_all(&root).with_context(|| format!("creating {}", root.display()))?;
        Ok(Self { root })
    }

    pub fn best(&self) -> PathBuf {
        self.root.join(BEST_CHECKPOINT)
    }

    pub fn last(&self) -> PathBuf {
        self.root.join(LAST_CHECKPOINT)
    }

    pub fn log(&self) -> PathBuf {
        self.root.join(LOG_FILE)
    }
}

/// Training state carried across epochs and checkpoints.
pub struct Trainer {
    pub config: RunConfig,
    pub model: DenseCaptioner32,
    pub adam: Adam<f32>,
    pub vocab: Vocabulary,
    pub epochs_done: usize,
    pub best: Option<(usize, f64)>,
}

/// Order of the training videos in `epoch`, a function of seed and epoch
/// only so resumed runs see the same order.
pub fn epoch_order(seed: u64, epoch: usize, n: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (epoch as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    order
}

fn objective(cfg: &RunConfig) -> Objective {
    Objective {
        weights: cfg.loss,
        matching: cfg.matching,
    }
}

/// A perturbed copy of `sample` for one (epoch, position) slot, or `None`
/// when augmentation is off.
pub fn augment(sample: &Sample, cfg: &AugmentConfig, seed: u64, epoch: usize, index: usize) -> Option<Sample> {
    if cfg.feature_noise == 0.0 && cfg.flip_probability == 0.0 {
        return None;
    }
    let mix = (epoch as u64).wrapping_mul(0xD1B5_4A32_D192_ED03) ^ (index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ mix ^ 0xA5A5_5A5A);
    let mut out = sample.clone();
    if rng.random_bool(cfg.flip_probability) {
        let t = out.frames.rows();
        let c = out.frames.cols();
        let mut data = Vec::with_capacity(t * c);
        for r in (0..t).rev() {
            data.extend_from_slice(sample.frames.row(r));
        }
        out.frames = Tensor::from_vec(t, c, data);
        for s in &mut out.truth.segments {
            *s = Segment {
                start: 1.0 - s.end,
                end: 1.0 - s.start,
            };
        }
    }
    if cfg.feature_noise > 0.0 {
        let normal = Normal::new(0.0, cfg.feature_noise as f32).expect("valid noise scale");
        for v in out.frames.data_mut() {
            *v += rng.sample(normal);
        }
    }
    Some(out)
}

/// Gradients and loss terms of one video.
pub fn video_gradients(model: &DenseCaptioner32, sample: &Sample, obj: &Objective) -> Result<(Gradients<f32>, LossComponents)> {
    let mut g = Graph::new(&model.params);
    let out = model.network.forward(&mut g, &sample.frames)?;
    let loss = model
        .network
        .set_loss(&mut g, &out, &sample.truth, obj)
        .with_context(|| format!("video {}", sample.video_id))?;
    let c = loss.loss.components;
    if !c.total.is_finite() {
        bail!("non-finite loss on video {}", sample.video_id);
    }
    Ok((g.backward(loss.loss.total).into_params(), c))
}

/// Caption-only gradients of one video with its ground-truth segments as
/// proposals.
pub fn paragraph_gradients(model: &DenseCaptioner32, sample: &Sample, cfg: &RunConfig) -> Result<(Gradients<f32>, f64)> {
    let mut g = Graph::new(&model.params);
    let loss = model.network.paragraph_loss(
        &mut g,
        &sample.frames,
        &sample.truth.segments,
        &sample.truth.captions,
        &cfg.loss,
    )?;
    Ok((g.backward(loss.total).into_params(), loss.components.total))
}

/// Sums per-video results in batch order so the outcome does not depend on
/// scheduling.
fn batch_sum<R: Send>(
    model: &DenseCaptioner32,
    batch: &[&Sample],
    f: impl Fn(&Sample) -> Result<(Gradients<f32>, R)> + Sync,
) -> Result<(Gradients<f32>, Vec<R>)> {
    let parts = batch.par_iter().map(|s| f(s)).collect::<Result<Vec<_>>>()?;
    let mut total = Gradients::zeros_like(&model.params);
    let mut rest = Vec::with_capacity(parts.len());
    for (g, r) in parts {
        total.accumulate(&g);
        rest.push(r);
    }
    if batch.len() > 1 {
        total.scale(1.0 / batch.len() as f32);
    }
    Ok((total, rest))
}

impl Trainer {
    pub fn new(config: RunConfig, vocab: Vocabulary) -> Result<Self> {
        config.validate()?;
        let model = DenseCaptioner32::new(config.model.clone(), config.seed)?;
        let adam = Adam::new(config.train.optimizer, &model.params);
        Ok(Self {
            config,
            model,
            adam,
            vocab,
            epochs_done: 0,
            best: None,
        })
    }

    /// Restores model, optimizer and progress from a last checkpoint. The
    /// stored model must match the configured one.
    pub fn resume(config: RunConfig, vocab: Vocabulary, path: &Path) -> Result<Self> {
        config.validate()?;
        let ck = Checkpoint::<f32>::load(path).with_context(|| format!("loading {}", path.display()))?;
        let model = DenseCaptioner32::from_checkpoint(&ck)?;
        if model.config != config.model {
            bail!("checkpoint {} was trained with a different model config", path.display());
        }
        let stored: Vec<String> = serde_json::from_value(ck.meta.get("vocab").cloned().unwrap_or_default())?;
        if stored != vocab.words()[4..] {
            bail!("checkpoint {} was trained with a different vocabulary", path.display());
        }
        let state = ck.meta.get("train").cloned().unwrap_or_default();
        let step = state.get("adam_step").and_then(|v| v.as_u64()).unwrap_or(0);
        let epochs_done = state.get("epochs_done").and_then(|v| v.as_u64()).unwrap_or(0) as usize;
        let best = match (state.get("best_epoch").and_then(|v| v.as_u64()), state.get("best_f1").and_then(|v| v.as_f64())) {
            (Some(e), Some(f)) => Some((e as usize, f)),
            _ => None,
        };
        let adam = Adam::import(config.train.optimizer, step, &model.params, &ck)?;
        Ok(Self {
            config,
            model,
            adam,
            vocab,
            epochs_done,
            best,
        })
    }

    pub fn predictor(&self) -> Predictor {
        Predictor {
            model: self.model.clone(),
            vocab: self.vocab.clone(),
            ranking: self.config.ranking,
        }
    }

    fn checkpoint(&self, with_optimizer: bool) -> Result<Checkpoint<f32>> {
        let mut meta = serde_json::Map::new();
        meta.insert("vocab".into(), json!(self.vocab.words()[4..]));
        meta.insert("ranking".into(), serde_json::to_value(self.config.ranking)?);
        meta.insert(
            "train".into(),
            json!({
                "epochs_done": self.epochs_done,
                "adam_step": self.adam.step,
                "best_epoch": self.best.map(|b| b.0),
                "best_f1": self.best.map(|b| b.1),
                "seed": self.config.seed,
            }),
        );
        let mut ck = self.model.to_checkpoint(meta)?;
        if with_optimizer {
            self.adam.export(&self.model.params, &mut ck);
        }
        Ok(ck)
    }

    pub fn save_best(&self, path: &Path) -> Result<()> {
        Ok(self.checkpoint(false)?.save(path)?)
    }

    pub fn save_last(&self, path: &Path) -> Result<()> {
        Ok(self.checkpoint(true)?.save(path)?)
    }

    /// One pass over `train` in the epoch's order.
    pub fn train_epoch(&mut self, train: &[Sample]) -> Result<(LossComponents, f64, u64)> {
        let obj = objective(&self.config);
        let order = epoch_order(self.config.seed, self.epochs_done, train.len());
        let mut sum = LossComponents::default();
        let mut norm_sum = 0.0;
        let mut steps = 0u64;
        let epoch = self.epochs_done;
        let aug = self.config.train.augment;
        let seed = self.config.seed;
        for chunk in order.chunks(self.config.train.batch_size) {
            let augmented: Vec<Option<Sample>> = chunk.iter().map(|&i| augment(&train[i], &aug, seed, epoch, i)).collect();
            let batch: Vec<&Sample> = chunk
                .iter()
                .zip(&augmented)
                .map(|(&i, a)| a.as_ref().unwrap_or(&train[i]))
                .collect();
            let (mut grads, comps) = batch_sum(&self.model, &batch, |s| video_gradients(&self.model, s, &obj))?;
            for c in comps {
                sum += c;
            }
            norm_sum += self.adam.step(&mut self.model.params, &mut grads)? as f64;
            steps += 1;
        }
        let n = train.len().max(1) as f64;
        let mean = LossComponents {
            giou: sum.giou / n,
            cls: sum.cls / n,
            count: sum.count / n,
            caption: sum.caption / n,
            total: sum.total / n,
        };
        Ok((mean, norm_sum / steps.max(1) as f64, steps))
    }

    /// Fits the proposal embeddings with every other parameter frozen, so
    /// dense-mode outputs are unchanged.
    pub fn train_paragraph_epoch(&mut self, train: &[Sample], adam: &mut Adam<f32>, epoch: usize) -> Result<(f64, u64)> {
        let order = epoch_order(self.config.seed ^ 0x5041_5241, epoch, train.len());
        let frozen: Vec<_> = self
            .model
            .params
            .iter()
            .filter(|(_, name, _)| !name.starts_with("proposals."))
            .map(|(id, _, _)| id)
            .collect();
        let mut total = 0.0;
        let mut steps = 0;
        for chunk in order.chunks(self.config.train.batch_size) {
            let batch: Vec<&Sample> = chunk.iter().map(|&i| &train[i]).collect();
            let cfg = &self.config;
            let (mut grads, losses) = batch_sum(&self.model, &batch, |s| paragraph_gradients(&self.model, s, cfg))?;
            for &id in &frozen {
                grads.get_mut(id).data_mut().fill(0.0);
            }
            total += losses.iter().sum::<f64>();
            adam.step(&mut self.model.params, &mut grads)?;
            steps += 1;
        }
        Ok((total / train.len().max(1) as f64, steps))
    }

    /// Trains until `config.train.epochs` epochs are done, validating on
    /// `val` and writing checkpoints and the log under `run`.
    pub fn fit(&mut self, train: &[Sample], val: &[Sample], run: &RunDir) -> Result<TrainSummary> {
        if train.is_empty() {
            bail!("no training videos");
        }
        let mut log_file = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(run.log())
            .with_context(|| format!("opening {}", run.log().display()))?;
        let mut log = Vec::new();
        let mut final_loss = f64::NAN;
        while self.epochs_done < self.config.train.epochs {
            let start = Instant::now();
            let (loss, grad_norm, steps) = self.train_epoch(train)?;
            self.epochs_done += 1;
            final_loss = loss.total;
            let epoch = self.epochs_done;
            let mut val_summary = None;
            if !val.is_empty() && (epoch.is_multiple_of(self.config.train.eval_every) || epoch == self.config.train.epochs) {
                let v = validate(&self.predictor(), val)?;
                let s = ValSummary::from(&v);
                if self.best.is_none_or(|(_, f)| s.f1 > f) {
                    self.best = Some((epoch, s.f1));
                    self.save_best(&run.best())?;
                }
                val_summary = Some(s);
            }
            if val.is_empty() {
                // Without validation the latest model is the best one.
                self.save_best(&run.best())?;
            }
            self.save_last(&run.last())?;
            let entry = EpochLog {
                stage: "dense".into(),
                epoch,
                steps,
                loss,
                grad_norm,
                val: val_summary,
                seconds: start.elapsed().as_secs_f64(),
            };
            log::info!(
                "epoch {epoch}: loss {:.4} (giou {:.4} cls {:.4} count {:.4} caption {:.4}){}",
                loss.total,
                loss.giou,
                loss.cls,
                loss.count,
                loss.caption,
                entry.val.as_ref().map(|v| format!(", val F1 {:.4} count acc {:.3}", v.f1, v.count_accuracy)).unwrap_or_default()
            );
            writeln!(log_file, "{}", serde_json::to_string(&entry)?)?;
            log.push(entry);
        }
        if self.config.train.paragraph_epochs > 0 {
            self.fit_paragraph(train, run, &mut log_file, &mut log)?;
        }
        Ok(TrainSummary {
            epochs: self.epochs_done,
            best_epoch: self.best.map(|b| b.0),
            best_f1: self.best.map(|b| b.1),
            final_loss,
            log,
        })
    }

    /// Paragraph stage applied to the best checkpoint, which is rewritten.
    fn fit_paragraph(&mut self, train: &[Sample], run: &RunDir, log_file: &mut std::fs::File, log: &mut Vec<EpochLog>) -> Result<()> {
        let best = Predictor::load(&run.best())?;
        let mut stage = Trainer {
            config: self.config.clone(),
            model: best.model,
            adam: Adam::new(self.config.train.optimizer, &self.model.params),
            vocab: self.vocab.clone(),
            epochs_done: self.epochs_done,
            best: self.best,
        };
        let mut adam = Adam::new(
            AdamConfig {
                learning_rate: self.config.train.paragraph_learning_rate,
                ..self.config.train.optimizer
            },
            &stage.model.params,
        );
        for epoch in 1..=self.config.train.paragraph_epochs {
            let start = Instant::now();
            let (loss, steps) = stage.train_paragraph_epoch(train, &mut adam, epoch)?;
            log::info!("paragraph epoch {epoch}: caption loss {loss:.4}");
            let entry = EpochLog {
                stage: "paragraph".into(),
                epoch,
                steps,
                loss: LossComponents {
                    caption: loss,
                    total: loss,
                    ..LossComponents::default()
                },
                grad_norm: 0.0,
                val: None,
                seconds: start.elapsed().as_secs_f64(),
            };
            writeln!(log_file, "{}", serde_json::to_string(&entry)?)?;
            log.push(entry);
        }
        stage.save_best(&run.best())
    }
}
