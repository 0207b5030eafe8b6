//! Loading a corpus directory into model-ready samples.

use std::path::Path;

use anyhow::{bail, Context, Result};
use densecap_core::geometry::Segment;
use densecap_core::model::GroundTruth;
use densecap_core::tensor::Tensor;
use densecap_core::ModelConfig;
use densecap_data::{load_annotations, read_features, AnnotationRecord, CorpusPaths, Vocabulary};
use rayon::prelude::*;

/// One video ready for training or evaluation.
#[derive(Debug, Clone)]
pub struct Sample {
    pub video_id: String,
    pub duration: f64,
    /// Rescaled to the model's temporal length.
    pub frames: Tensor<f32>,
    pub truth: GroundTruth<f32>,
    pub record: AnnotationRecord,
}

#[derive(Debug, Clone)]
pub struct LoadedCorpus {
    pub vocab: Vocabulary,
    pub samples: Vec<Sample>,
}

/// Checks that a corpus fits a model before any training starts.
pub fn check_compatible(model: &ModelConfig, vocab: &Vocabulary, c_in: usize) -> Result<()> {
    if vocab.len() > model.vocab_size {
        bail!(
            "corpus vocabulary has {} tokens but the model only {}; raise model.vocab_size",
            vocab.len(),
            model.vocab_size
        );
    }
    if c_in != model.input_dim {
        bail!("corpus features have {c_in} channels but model.input_dim is {}", model.input_dim);
    }
    Ok(())
}

pub fn load_corpus(root: &Path, model: &ModelConfig) -> Result<LoadedCorpus> {
    let paths = CorpusPaths::new(root);
    let vocab = Vocabulary::load(&paths.vocab).with_context(|| format!("loading corpus {}", root.display()))?;
    let records = load_annotations(&paths.annotations)?;
    if records.is_empty() {
        bail!("corpus {} has no videos", root.display());
    }
    let first = densecap_data::features_io::read_sidecar(&paths.features, &records[0].video_id)?;
    check_compatible(model, &vocab, first.c_in)?;
    let samples = records
        .into_par_iter()
        .map(|record| load_sample(&paths.features, record, &vocab, model))
        .collect::<Result<Vec<_>>>()?;
    Ok(LoadedCorpus { vocab, samples })
}

pub fn load_sample(features: &Path, record: AnnotationRecord, vocab: &Vocabulary, model: &ModelConfig) -> Result<Sample> {
    let seq = read_features(features, &record.video_id)?;
    if seq.features.cols() != model.input_dim {
        bail!(
            "video {}: {} feature channels, model expects {}",
            record.video_id,
            seq.features.cols(),
            model.input_dim
        );
    }
    let frames = densecap_core::features::rescale_temporal(&seq.features, model.temporal_length)?;
    let segments: Vec<Segment<f32>> = record.normalized_segments().iter().map(|s| s.cast()).collect();
    let mut captions: Vec<Vec<usize>> = record.sentences().map(|s| vocab.tokenize(s)).collect();
    for c in &mut captions {
        // Keep the end token when truncating.
        if c.len() > model.max_caption_len {
            c.truncate(model.max_caption_len - 1);
            c.push(densecap_core::heads::tokens::EOS);
        }
    }
    Ok(Sample {
        video_id: record.video_id.clone(),
        duration: record.duration_seconds,
        frames,
        truth: GroundTruth { segments, captions },
        record,
    })
}
