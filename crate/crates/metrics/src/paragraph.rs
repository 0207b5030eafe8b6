//! Paragraph-level caption scores: each video's captions, in time order,
//! joined into one document and compared with the joined references.

use serde::{Deserialize, Serialize};

use crate::soda::time_order;
use crate::text::{bleu4, Cider};
use crate::types::{sorted, VideoEval};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParagraphScores {
    pub bleu4: f64,
    pub cider: f64,
}

fn joined(spans: &[crate::types::CaptionedSpan]) -> Vec<String> {
    time_order(spans).into_iter().flat_map(|s| s.tokens.iter().cloned()).collect()
}

/// Means over videos that have references.
pub fn paragraph_scores(videos: &[VideoEval]) -> ParagraphScores {
    let videos: Vec<&VideoEval> = sorted(videos).into_iter().filter(|v| !v.references.is_empty()).collect();
    if videos.is_empty() {
        return ParagraphScores { bleu4: 0.0, cider: 0.0 };
    }
    let refs: Vec<Vec<String>> = videos.iter().map(|v| joined(&v.references)).collect();
    let cands: Vec<Vec<String>> = videos.iter().map(|v| joined(&v.predictions)).collect();
    let cider = Cider::new(refs.iter().map(std::slice::from_ref));
    let n = videos.len() as f64;
    ParagraphScores {
        bleu4: cands.iter().zip(&refs).map(|(c, r)| bleu4(c, r)).sum::<f64>() / n,
        cider: cands
            .iter()
            .zip(&refs)
            .map(|(c, r)| cider.score(c, std::slice::from_ref(r)))
            .sum::<f64>()
            / n,
    }
}
