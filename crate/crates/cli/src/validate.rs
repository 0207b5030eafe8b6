//! Scoring a model on annotated samples.

use anyhow::Result;
use densecap_core::inference::CaptionedEvent;
use densecap_metrics::{evaluate, CaptionedSpan, EvalReport, VideoEval, DEFAULT_THRESHOLDS};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::Sample;
use crate::predict::{DenseOutput, Predictor};

/// Dense predictions of every sample, in sample order.
pub fn predict_samples(predictor: &Predictor, samples: &[Sample]) -> Result<Vec<DenseOutput>> {
    samples.par_iter().map(|s| predictor.dense(&s.frames)).collect()
}

/// Pairs predicted events with the sample's annotations in seconds.
pub fn video_eval(predictor: &Predictor, sample: &Sample, events: &[CaptionedEvent<f32>]) -> VideoEval {
    let d = sample.duration;
    VideoEval {
        video_id: sample.video_id.clone(),
        predictions: events
            .iter()
            .map(|e| {
                CaptionedSpan::new(
                    e.segment.start as f64 * d,
                    e.segment.end as f64 * d,
                    &predictor.vocab.detokenize(&e.tokens),
                )
            })
            .collect(),
        references: sample
            .record
            .events
            .iter()
            .map(|e| CaptionedSpan::new(e.start, e.end, &e.sentence))
            .collect(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Validation {
    pub report: EvalReport,
    /// Fraction of videos whose predicted event count equals the truth.
    pub count_accuracy: f64,
}

pub fn validate(predictor: &Predictor, samples: &[Sample]) -> Result<Validation> {
    let outputs = predict_samples(predictor, samples)?;
    let videos: Vec<VideoEval> = samples
        .iter()
        .zip(&outputs)
        .map(|(s, o)| video_eval(predictor, s, &o.events))
        .collect();
    let exact = samples
        .iter()
        .zip(&outputs)
        .filter(|(s, o)| o.count.predicted_count == s.truth.len())
        .count();
    Ok(Validation {
        report: evaluate(&videos, &DEFAULT_THRESHOLDS),
        count_accuracy: if samples.is_empty() {
            0.0
        } else {
            exact as f64 / samples.len() as f64
        },
    })
}

/// Position-wise token agreement of a caption with its reference,
/// counted over the reference length (end token excluded).
pub fn token_matches(predicted: &[usize], reference: &[usize]) -> usize {
    predicted.iter().zip(reference).filter(|(a, b)| a == b).count()
}
