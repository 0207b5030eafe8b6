//! Dense video captioning by set prediction: a deformable transformer over
//! a temporal feature pyramid decodes a fixed set of event queries into
//! localized, captioned events, trained with bipartite matching.
//!
//! Everything numeric is generic over [`Scalar`] (`f32` or `f64`); the
//! aliases below fix the common choices.

pub mod attention;
pub mod autograd;
pub mod checkpoint;
pub mod config;
pub mod error;
pub mod features;
pub mod geometry;
pub mod gradcheck;
pub mod heads;
pub mod inference;
pub mod loss;
pub mod matching;
pub mod model;
pub mod nn;
pub mod optim;
pub mod params;
pub mod scalar;
pub mod tensor;
pub mod transformer;

pub use config::{CaptionHeadKind, ModelConfig};
pub use error::{Error, Result};
pub use geometry::{giou, iou, segment_from_center_length, CenterLength, Segment};
pub use inference::{event_confidence, select_events, RankingConfig};
pub use matching::{hungarian, MatchCostConfig, Matching};
pub use model::{DenseCaptioner, GroundTruth, Objective};
pub use scalar::Scalar;
pub use tensor::Tensor;

/// A normalized `(start, end)` interval in double precision.
pub type TemporalSegment = Segment<f64>;
/// Single-precision model, the training default.
pub type DenseCaptioner32 = DenseCaptioner<f32>;
/// Double-precision model, used for gradient checks.
pub type DenseCaptioner64 = DenseCaptioner<f64>;
pub type Tensor32 = Tensor<f32>;
pub type Tensor64 = Tensor<f64>;
