//! The four subcommands as library functions.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use densecap_data::{generate_corpus, load_annotations, load_predictions, load_proposals, save_predictions, CorpusPaths};
use densecap_metrics::{evaluate, pair_files, EvalReport, DEFAULT_THRESHOLDS};

use crate::config::RunConfig;
use crate::corpus::{load_corpus, Sample};
use crate::predict::{predict_dir, Predictor};
use crate::train::{RunDir, TrainSummary, Trainer};

/// Environment variable naming the directory for default outputs.
pub const CACHE_DIR_ENV: &str = "DENSECAP_CACHE_DIR";

pub fn cache_dir() -> PathBuf {
    std::env::var_os(CACHE_DIR_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(".densecap"))
}

/// Runs `f` on a single worker thread when `deterministic`.
pub fn with_threads<R: Send>(deterministic: bool, f: impl FnOnce() -> R + Send) -> Result<R> {
    if deterministic {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build()?;
        Ok(pool.install(f))
    } else {
        Ok(f())
    }
}

pub fn cmd_generate(cfg: &RunConfig) -> Result<(PathBuf, densecap_data::synth::CorpusSummary)> {
    cfg.synth.validate()?;
    let out = cfg.paths.output.clone().unwrap_or_else(|| cache_dir().join("corpus"));
    let summary = with_threads(cfg.deterministic, || generate_corpus(cfg.seed, cfg.videos, &cfg.synth, &out))??;
    Ok((out, summary))
}

/// Training and validation samples: the validation corpus when given,
/// otherwise the last `val_videos` videos of the training corpus.
pub fn load_splits(cfg: &RunConfig) -> Result<(densecap_data::Vocabulary, Vec<Sample>, Vec<Sample>)> {
    let Some(root) = cfg.paths.corpus.as_deref() else {
        bail!("no training corpus given (paths.corpus or --corpus)");
    };
    let corpus = load_corpus(root, &cfg.model)?;
    let mut train = corpus.samples;
    let val = match cfg.paths.val_corpus.as_deref() {
        Some(v) => {
            let val = load_corpus(v, &cfg.model)?;
            if val.vocab != corpus.vocab {
                bail!("validation corpus {} has a different vocabulary", v.display());
            }
            val.samples
        }
        None => {
            let k = cfg.train.val_videos.min(train.len().saturating_sub(1));
            train.split_off(train.len() - k)
        }
    };
    Ok((corpus.vocab, train, val))
}

pub fn cmd_train(cfg: &RunConfig, resume: Option<&Path>) -> Result<(PathBuf, TrainSummary)> {
    cfg.validate()?;
    let out = cfg.paths.output.clone().unwrap_or_else(|| cache_dir().join("run"));
    with_threads(cfg.deterministic, || -> Result<(PathBuf, TrainSummary)> {
        let (vocab, train, val) = load_splits(cfg)?;
        let run = RunDir::new(&out)?;
        std::fs::write(run.root.join("config.toml"), cfg.to_toml())?;
        let mut trainer = match resume {
            Some(p) => Trainer::resume(cfg.clone(), vocab, p)?,
            None => Trainer::new(cfg.clone(), vocab)?,
        };
        log::info!(
            "training on {} videos, validating on {}, {} parameters",
            train.len(),
            val.len(),
            trainer.model.params.numel()
        );
        let summary = trainer.fit(&train, &val, &run)?;
        Ok((out.clone(), summary))
    })?
}

pub fn cmd_predict(checkpoint: &Path, features: &Path, proposals: Option<&Path>, output: &Path, deterministic: bool) -> Result<usize> {
    let predictor = Predictor::load(checkpoint)?;
    let proposals = proposals.map(load_proposals).transpose()?;
    let preds = with_threads(deterministic, || predict_dir(&predictor, features, proposals.as_ref()))??;
    save_predictions(output, &preds)?;
    Ok(preds.values().map(Vec::len).sum())
}

/// Accepts an annotation file or a corpus directory.
pub fn annotations_path(path: &Path) -> PathBuf {
    if path.is_dir() {
        CorpusPaths::new(path).annotations
    } else {
        path.to_path_buf()
    }
}

pub fn cmd_evaluate(predictions: &Path, annotations: &Path) -> Result<EvalReport> {
    let preds = load_predictions(predictions)?;
    let ann_path = annotations_path(annotations);
    let records = load_annotations(&ann_path).with_context(|| format!("loading {}", ann_path.display()))?;
    let videos = pair_files(&preds, &records);
    Ok(evaluate(&videos, &DEFAULT_THRESHOLDS))
}
