//! Dense captioning evaluation: localization recall/precision/F1,
//! caption scores of temporally matched pairs, an alignment-based story
//! score and paragraph scores.

pub mod dense;
pub mod localization;
pub mod paragraph;
pub mod report;
pub mod soda;
pub mod text;
pub mod types;

pub use dense::{dense_caption_scores, dense_caption_scores_by_threshold};
pub use localization::{localization_scores, LocalizationScores, DEFAULT_THRESHOLDS};
pub use paragraph::{paragraph_scores, ParagraphScores};
pub use report::{evaluate, EvalCounts, EvalReport};
pub use soda::{soda_c, soda_c_multi};
pub use text::{bleu4, bleu4_multi, tokenize, CaptionMetric, Cider, PairScorer};
pub use types::{pair_files, CaptionedSpan, VideoEval};
