//! Caption quality of temporally matched prediction/reference pairs.

use rayon::prelude::*;

use crate::text::{CaptionMetric, PairScorer};
use crate::types::{sorted, span_iou, VideoEval};

/// Reference captions of the corpus, the document set for CIDEr.
pub fn reference_corpus(videos: &[VideoEval]) -> Vec<Vec<String>> {
    sorted(videos)
        .iter()
        .flat_map(|v| v.references.iter().map(|r| r.tokens.clone()))
        .collect()
}

/// Per-threshold scores and their mean. At a threshold each prediction
/// scores the best metric value over the references it overlaps by at
/// least the threshold, or zero when it overlaps none; the threshold score
/// is the mean over all predictions of the corpus.
pub fn dense_caption_scores_by_threshold(videos: &[VideoEval], thresholds: &[f64], metric: CaptionMetric) -> Vec<f64> {
    let scorer = PairScorer::new(metric, &reference_corpus(videos));
    let videos = sorted(videos);
    // (iou, metric) of every pair, computed once.
    let pairs: Vec<Vec<Vec<(f64, f64)>>> = videos
        .par_iter()
        .map(|v| {
            v.predictions
                .iter()
                .map(|p| {
                    v.references
                        .iter()
                        .map(|r| {
                            let o = span_iou(&p.segment, &r.segment);
                            let s = if o >= thresholds.iter().cloned().fold(f64::INFINITY, f64::min) {
                                scorer.score(&p.tokens, &r.tokens)
                            } else {
                                0.0
                            };
                            (o, s)
                        })
                        .collect()
                })
                .collect()
        })
        .collect();
    let n_preds: usize = pairs.iter().map(Vec::len).sum();
    thresholds
        .iter()
        .map(|&t| {
            if n_preds == 0 {
                return 0.0;
            }
            let total: f64 = pairs
                .iter()
                .flatten()
                .map(|per_ref| per_ref.iter().filter(|(o, _)| *o >= t).map(|(_, s)| *s).fold(0.0, f64::max))
                .sum();
            total / n_preds as f64
        })
        .collect()
}

pub fn dense_caption_scores(videos: &[VideoEval], thresholds: &[f64], metric: CaptionMetric) -> f64 {
    let by = dense_caption_scores_by_threshold(videos, thresholds, metric);
    if by.is_empty() {
        0.0
    } else {
        by.iter().sum::<f64>() / by.len() as f64
    }
}
