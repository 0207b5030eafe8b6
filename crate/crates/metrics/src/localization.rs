//! Threshold-averaged localization recall, precision and F1.

use serde::{Deserialize, Serialize};

use crate::types::{sorted, span_iou, VideoEval};

pub const DEFAULT_THRESHOLDS: [f64; 4] = [0.3, 0.5, 0.7, 0.9];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalizationScores {
    pub thresholds: Vec<f64>,
    pub recall: Vec<f64>,
    pub precision: Vec<f64>,
    pub avg_recall: f64,
    pub avg_precision: f64,
    pub f1: f64,
}

pub fn harmonic_mean(a: f64, b: f64) -> f64 {
    if a + b > 0.0 {
        2.0 * a * b / (a + b)
    } else {
        0.0
    }
}

/// At each threshold a reference is recalled when some prediction of its
/// video overlaps it by at least the threshold, and a prediction is
/// precise when it overlaps some reference that much. Counts are pooled
/// over the corpus; a ratio with an empty denominator is zero.
pub fn localization_scores(videos: &[VideoEval], thresholds: &[f64]) -> LocalizationScores {
    let videos = sorted(videos);
    let total_refs: usize = videos.iter().map(|v| v.references.len()).sum();
    let total_preds: usize = videos.iter().map(|v| v.predictions.len()).sum();
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    let mut recall = Vec::with_capacity(thresholds.len());
    let mut precision = Vec::with_capacity(thresholds.len());
    for &t in thresholds {
        let mut recalled = 0;
        let mut precise = 0;
        for v in &videos {
            recalled += v
                .references
                .iter()
                .filter(|r| v.predictions.iter().any(|p| span_iou(&p.segment, &r.segment) >= t))
                .count();
            precise += v
                .predictions
                .iter()
                .filter(|p| v.references.iter().any(|r| span_iou(&p.segment, &r.segment) >= t))
                .count();
        }
        recall.push(ratio(recalled, total_refs));
        precision.push(ratio(precise, total_preds));
    }
    let mean = |x: &[f64]| if x.is_empty() { 0.0 } else { x.iter().sum::<f64>() / x.len() as f64 };
    let avg_recall = mean(&recall);
    let avg_precision = mean(&precision);
    LocalizationScores {
        thresholds: thresholds.to_vec(),
        recall,
        precision,
        avg_recall,
        avg_precision,
        f1: harmonic_mean(avg_recall, avg_precision),
    }
}
