//! Story-level score: the best order-preserving one-to-one alignment of
//! time-ordered predictions and references.

use rayon::prelude::*;

use crate::localization::harmonic_mean;
use crate::text::{CaptionMetric, PairScorer};
use crate::types::{sorted, span_iou, CaptionedSpan, VideoEval};

/// Orders spans by start, then end.
pub fn time_order(spans: &[CaptionedSpan]) -> Vec<&CaptionedSpan> {
    let mut v: Vec<&CaptionedSpan> = spans.iter().collect();
    v.sort_by(|a, b| {
        a.segment
            .start
            .total_cmp(&b.segment.start)
            .then(a.segment.end.total_cmp(&b.segment.end))
    });
    v
}

/// Maximum total of `score[i][j]` over alignments whose pairs increase in
/// both indices.
pub fn best_alignment(score: &[Vec<f64>]) -> f64 {
    let rows = score.len();
    let cols = score.first().map_or(0, Vec::len);
    let mut best = vec![vec![0.0f64; cols + 1]; rows + 1];
    for i in 1..=rows {
        for j in 1..=cols {
            best[i][j] = best[i - 1][j]
                .max(best[i][j - 1])
                .max(best[i - 1][j - 1] + score[i - 1][j - 1]);
        }
    }
    best[rows][cols]
}

/// Pair score matrix: IOU times caption metric. CIDEr is divided by its
/// maximum of 10 so every pair score lies in `[0, 1]`.
pub fn pair_scores(preds: &[&CaptionedSpan], refs: &[&CaptionedSpan], scorer: &PairScorer) -> Vec<Vec<f64>> {
    let scale = match scorer {
        PairScorer::Bleu4 => 1.0,
        PairScorer::Cider(_) => 0.1,
    };
    preds
        .iter()
        .map(|p| {
            refs.iter()
                .map(|r| {
                    let o = span_iou(&p.segment, &r.segment);
                    if o > 0.0 {
                        o * scale * scorer.score(&p.tokens, &r.tokens)
                    } else {
                        0.0
                    }
                })
                .collect()
        })
        .collect()
}

/// F-score of one video's best alignment.
pub fn video_soda(preds: &[CaptionedSpan], refs: &[CaptionedSpan], scorer: &PairScorer) -> f64 {
    if preds.is_empty() || refs.is_empty() {
        return 0.0;
    }
    let p = time_order(preds);
    let r = time_order(refs);
    let total = best_alignment(&pair_scores(&p, &r, scorer));
    harmonic_mean(total / p.len() as f64, total / r.len() as f64)
}

/// Mean per-video score. CIDEr statistics come from the references.
pub fn soda_c(videos: &[VideoEval], metric: CaptionMetric) -> f64 {
    if videos.is_empty() {
        return 0.0;
    }
    let scorer = PairScorer::new(metric, &crate::dense::reference_corpus(videos));
    let per: Vec<f64> = sorted(videos)
        .par_iter()
        .map(|v| video_soda(&v.predictions, &v.references, &scorer))
        .collect();
    per.iter().sum::<f64>() / per.len() as f64
}

/// Scores against each reference set independently and averages.
pub fn soda_c_multi(reference_sets: &[Vec<VideoEval>], metric: CaptionMetric) -> f64 {
    if reference_sets.is_empty() {
        return 0.0;
    }
    reference_sets.iter().map(|v| soda_c(v, metric)).sum::<f64>() / reference_sets.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn alignment_is_monotone() {
        // The diagonal-crossing pair (0,1)+(1,0) is not allowed.
        let s = vec![vec![0.1, 0.9], vec![0.8, 0.2]];
        assert!((best_alignment(&s) - 0.9).abs() < 1e-12);
        let s = vec![vec![0.5, 0.1], vec![0.1, 0.5]];
        assert!((best_alignment(&s) - 1.0).abs() < 1e-12);
        assert_eq!(best_alignment(&[]), 0.0);
    }
}
