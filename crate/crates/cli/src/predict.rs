//! Turning model outputs into prediction records.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use densecap_core::checkpoint::Checkpoint;
use densecap_core::geometry::Segment;
use densecap_core::heads::CountPrediction;
use densecap_core::inference::{paragraph_events, select_events, CaptionedEvent, RankingConfig};
use densecap_core::tensor::Tensor;
use densecap_core::DenseCaptioner32;
use densecap_data::{read_features, PredictedEvent, PredictionFile, Vocabulary};
use rayon::prelude::*;

/// A trained model with the vocabulary and ranking settings stored
/// alongside it.
#[derive(Debug, Clone)]
pub struct Predictor {
    pub model: DenseCaptioner32,
    pub vocab: Vocabulary,
    pub ranking: RankingConfig,
}

/// Dense-mode output of one video.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseOutput {
    pub events: Vec<CaptionedEvent<f32>>,
    pub count: CountPrediction<f32>,
}

impl Predictor {
    pub fn load(path: &Path) -> Result<Self> {
        let ck = Checkpoint::<f32>::load(path).with_context(|| format!("loading checkpoint {}", path.display()))?;
        Self::from_checkpoint(&ck)
    }

    pub fn from_checkpoint(ck: &Checkpoint<f32>) -> Result<Self> {
        let model = DenseCaptioner32::from_checkpoint(ck)?;
        let words: Vec<String> = serde_json::from_value(
            ck.meta
                .get("vocab")
                .cloned()
                .ok_or_else(|| anyhow!("checkpoint has no vocabulary"))?,
        )?;
        let ranking = match ck.meta.get("ranking") {
            Some(v) => serde_json::from_value(v.clone())?,
            None => RankingConfig::default(),
        };
        Ok(Self {
            model,
            vocab: Vocabulary::new(words),
            ranking,
        })
    }

    pub fn dense(&self, frames: &Tensor<f32>) -> Result<DenseOutput> {
        let raw = self.model.predict(frames)?;
        let sel = select_events(&raw.detections, &raw.captions, &raw.count, &self.ranking)?;
        Ok(DenseOutput {
            events: sel.events,
            count: raw.count,
        })
    }

    /// One caption per proposal (normalized segments), ordered by start.
    pub fn paragraph(&self, frames: &Tensor<f32>, proposals: &[Segment<f32>]) -> Result<Vec<CaptionedEvent<f32>>> {
        let caps = self.model.paragraph_captions(frames, proposals)?;
        Ok(paragraph_events(proposals, &caps)?)
    }

    pub fn records(&self, events: &[CaptionedEvent<f32>], duration: f64) -> Vec<PredictedEvent> {
        events
            .iter()
            .map(|e| PredictedEvent {
                sentence: self.vocab.detokenize(&e.tokens),
                timestamp: [e.segment.start as f64 * duration, e.segment.end as f64 * duration],
                confidence: e.confidence as f64,
            })
            .collect()
    }
}

/// Feature directory of a corpus root, or the directory itself.
pub fn features_dir(path: &Path) -> PathBuf {
    let nested = path.join("features");
    if nested.is_dir() {
        nested
    } else {
        path.to_path_buf()
    }
}

/// Video ids with a sidecar in `dir`, sorted.
pub fn list_videos(dir: &Path) -> Result<Vec<String>> {
    let mut ids = Vec::new();
    for entry in std::fs::read_dir(dir).with_context(|| format!("listing {}", dir.display()))? {
        let path = entry?.path();
        if path.extension().is_some_and(|e| e == "json") && path.with_extension("bin").exists() {
            if let Some(stem) = path.file_stem() {
                ids.push(stem.to_string_lossy().into_owned());
            }
        }
    }
    ids.sort();
    if ids.is_empty() {
        bail!("no feature files in {}", dir.display());
    }
    Ok(ids)
}

/// Predictions for every video under `features`; paragraph mode when
/// `proposals` (seconds, per video) are given.
pub fn predict_dir(predictor: &Predictor, features: &Path, proposals: Option<&BTreeMap<String, Vec<[f64; 2]>>>) -> Result<PredictionFile> {
    let dir = features_dir(features);
    let ids = list_videos(&dir)?;
    let out = ids
        .par_iter()
        .map(|id| -> Result<(String, Vec<PredictedEvent>)> {
            let seq = read_features(&dir, id)?;
            let duration = seq.duration_seconds;
            let frames = predictor.model.prepare_frames(&seq)?;
            let events = match proposals {
                None => predictor.dense(&frames)?.events,
                Some(p) => {
                    let spans = p.get(id).ok_or_else(|| anyhow!("no proposals for video {id}"))?;
                    let segs: Vec<Segment<f32>> = spans
                        .iter()
                        .map(|[s, e]| Segment {
                            start: (s / duration).clamp(0.0, 1.0) as f32,
                            end: (e / duration).clamp(0.0, 1.0) as f32,
                        })
                        .collect();
                    predictor.paragraph(&frames, &segs).with_context(|| format!("video {id}"))?
                }
            };
            Ok((id.clone(), predictor.records(&events, duration)))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(out.into_iter().collect())
}
