use densecap_core::geometry::{iou, Segment};
use densecap_data::{AnnotationRecord, PredictionFile};

use crate::text::tokenize;

/// A temporal span with a tokenized caption.
#[derive(Debug, Clone, PartialEq)]
pub struct CaptionedSpan {
    pub segment: Segment<f64>,
    pub tokens: Vec<String>,
}

impl CaptionedSpan {
    pub fn new(start: f64, end: f64, sentence: &str) -> Self {
        Self {
            segment: Segment { start, end },
            tokens: tokenize(sentence),
        }
    }
}

/// Predictions and ground truth of one video, in any common time unit.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoEval {
    pub video_id: String,
    pub predictions: Vec<CaptionedSpan>,
    pub references: Vec<CaptionedSpan>,
}

/// IOU treating malformed spans as non-overlapping.
pub fn span_iou(a: &Segment<f64>, b: &Segment<f64>) -> f64 {
    iou(a, b).unwrap_or(0.0)
}

/// Sorts by video id so corpus scores do not depend on input order.
pub fn sorted(videos: &[VideoEval]) -> Vec<&VideoEval> {
    let mut v: Vec<&VideoEval> = videos.iter().collect();
    v.sort_by(|a, b| a.video_id.cmp(&b.video_id));
    v
}

/// Pairs prediction and annotation files by video id. Annotated videos
/// without predictions get none; predicted videos without annotations get
/// no references.
pub fn pair_files(predictions: &PredictionFile, annotations: &[AnnotationRecord]) -> Vec<VideoEval> {
    let mut out: Vec<VideoEval> = annotations
        .iter()
        .map(|r| VideoEval {
            video_id: r.video_id.clone(),
            predictions: predictions
                .get(&r.video_id)
                .map(|p| p.iter().map(|e| CaptionedSpan::new(e.timestamp[0], e.timestamp[1], &e.sentence)).collect())
                .unwrap_or_default(),
            references: r.events.iter().map(|e| CaptionedSpan::new(e.start, e.end, &e.sentence)).collect(),
        })
        .collect();
    for (id, preds) in predictions {
        if annotations.iter().all(|r| &r.video_id != id) {
            out.push(VideoEval {
                video_id: id.clone(),
                predictions: preds
                    .iter()
                    .map(|e| CaptionedSpan::new(e.timestamp[0], e.timestamp[1], &e.sentence))
                    .collect(),
                references: Vec::new(),
            });
        }
    }
    out
}
