//! Full evaluation report.

use serde::{Deserialize, Serialize};

use crate::dense::dense_caption_scores_by_threshold;
use crate::localization::{localization_scores, LocalizationScores};
use crate::paragraph::{paragraph_scores, ParagraphScores};
use crate::soda::soda_c;
use crate::text::CaptionMetric;
use crate::types::VideoEval;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalCounts {
    pub videos: usize,
    pub predictions: usize,
    pub references: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub localization: LocalizationScores,
    pub bleu4_by_threshold: Vec<f64>,
    pub cider_by_threshold: Vec<f64>,
    pub bleu4: f64,
    pub cider: f64,
    /// Alignment score with CIDEr pair scores.
    pub soda_c: f64,
    pub paragraph: ParagraphScores,
    /// Always absent; kept so readers of the report see it is not computed.
    pub meteor: Option<f64>,
    pub counts: EvalCounts,
}

fn mean(x: &[f64]) -> f64 {
    if x.is_empty() {
        0.0
    } else {
        x.iter().sum::<f64>() / x.len() as f64
    }
}

pub fn evaluate(videos: &[VideoEval], thresholds: &[f64]) -> EvalReport {
    let bleu4_by_threshold = dense_caption_scores_by_threshold(videos, thresholds, CaptionMetric::Bleu4);
    let cider_by_threshold = dense_caption_scores_by_threshold(videos, thresholds, CaptionMetric::Cider);
    EvalReport {
        localization: localization_scores(videos, thresholds),
        bleu4: mean(&bleu4_by_threshold),
        cider: mean(&cider_by_threshold),
        bleu4_by_threshold,
        cider_by_threshold,
        soda_c: soda_c(videos, CaptionMetric::Cider),
        paragraph: paragraph_scores(videos),
        meteor: None,
        counts: EvalCounts {
            videos: videos.len(),
            predictions: videos.iter().map(|v| v.predictions.len()).sum(),
            references: videos.iter().map(|v| v.references.len()).sum(),
        },
    }
}

impl EvalReport {
    pub fn is_finite(&self) -> bool {
        let l = &self.localization;
        l.recall
            .iter()
            .chain(&l.precision)
            .chain(&self.bleu4_by_threshold)
            .chain(&self.cider_by_threshold)
            .chain(&[l.avg_recall, l.avg_precision, l.f1, self.bleu4, self.cider, self.soda_c])
            .chain(&[self.paragraph.bleu4, self.paragraph.cider])
            .all(|v| v.is_finite())
    }

    pub fn to_table(&self) -> String {
        let l = &self.localization;
        let mut s = String::new();
        s.push_str(&format!(
            "videos {}  predictions {}  references {}\n\n",
            self.counts.videos, self.counts.predictions, self.counts.references
        ));
        s.push_str("  IOU   recall  precision  BLEU4    CIDEr\n");
        for (i, t) in l.thresholds.iter().enumerate() {
            s.push_str(&format!(
                "  {t:.2}  {:>6.4}  {:>9.4}  {:>6.4}  {:>7.4}\n",
                l.recall[i], l.precision[i], self.bleu4_by_threshold[i], self.cider_by_threshold[i]
            ));
        }
        s.push_str(&format!(
            "  mean  {:>6.4}  {:>9.4}  {:>6.4}  {:>7.4}\n\n",
            l.avg_recall, l.avg_precision, self.bleu4, self.cider
        ));
        s.push_str(&format!("F1          {:.4}\n", l.f1));
        s.push_str(&format!("SODA_c      {:.4}\n", self.soda_c));
        s.push_str(&format!(
            "paragraph   BLEU4 {:.4}  CIDEr {:.4}\n",
            self.paragraph.bleu4, self.paragraph.cider
        ));
        s.push_str("METEOR      unavailable\n");
        s
    }
}
