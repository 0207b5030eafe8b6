//! Ranking of per-query outputs and counter-driven selection of the final
//! event set.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Segment;
use crate::heads::{CaptionHypothesis, CountPrediction, EventDetection};
use crate::matching::FOCAL_EPS;
use crate::scalar::{lit, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RankingConfig {
    /// Length modulation exponent.
    pub gamma: f64,
    /// Weight of the caption term.
    pub mu: f64,
}

impl Default for RankingConfig {
    fn default() -> Self {
        Self { gamma: 2.0, mu: 0.3 }
    }
}

impl RankingConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma.is_finite() && self.mu.is_finite() && self.gamma >= 0.0 && self.mu >= 0.0) {
            return Err(Error::Config("ranking gamma and mu must be finite and non-negative".into()));
        }
        Ok(())
    }
}

/// `c_loc + mu / M^gamma * sum_t log(c_t)`, probabilities clamped at 1e-8.
pub fn event_confidence<T: Scalar>(det: &EventDetection<T>, cap: &CaptionHypothesis<T>, cfg: &RankingConfig) -> Result<T> {
    if cap.token_probs.is_empty() {
        return Err(Error::Input("caption has no tokens".into()));
    }
    let eps: T = lit(FOCAL_EPS);
    let loglik: T = cap.token_probs.iter().map(|&p| p.max(eps).ln()).sum();
    let m = T::from_usize_lossy(cap.token_probs.len());
    Ok(det.loc_confidence + lit::<T>(cfg.mu) / m.powf(lit(cfg.gamma)) * loglik)
}

/// One event of the final output.
#[derive(Debug, Clone, PartialEq)]
pub struct CaptionedEvent<T> {
    pub segment: Segment<T>,
    /// Caption tokens without the end marker.
    pub tokens: Vec<usize>,
    pub confidence: T,
    pub query_index: usize,
}

/// Final events of one video, sorted by start time.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseCaptionSet<T> {
    pub video_id: String,
    pub events: Vec<CaptionedEvent<T>>,
}

/// Outcome of [`select_events`]; `clamped` is set when the counter asked for
/// more events than there are queries.
#[derive(Debug, Clone, PartialEq)]
pub struct Selection<T> {
    pub events: Vec<CaptionedEvent<T>>,
    pub clamped: bool,
}

/// Top `N_set` queries by confidence (ties to the lower query index),
/// re-sorted by start time. No suppression of overlapping events.
pub fn select_events<T: Scalar>(
    detections: &[EventDetection<T>],
    captions: &[CaptionHypothesis<T>],
    count: &CountPrediction<T>,
    cfg: &RankingConfig,
) -> Result<Selection<T>> {
    if detections.len() != captions.len() {
        return Err(Error::Input("one caption per detection required".into()));
    }
    let mut scored = detections
        .iter()
        .zip(captions)
        .map(|(d, c)| {
            Ok(CaptionedEvent {
                segment: d.segment,
                tokens: c.words().to_vec(),
                confidence: event_confidence(d, c, cfg)?,
                query_index: d.query_index,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    if scored.iter().any(|e| !e.confidence.is_finite()) {
        return Err(Error::NonFinite("event confidence"));
    }
    scored.sort_by(|a, b| {
        b.confidence
            .partial_cmp(&a.confidence)
            .expect("finite confidences")
            .then(a.query_index.cmp(&b.query_index))
    });
    let clamped = count.predicted_count > scored.len();
    if clamped {
        log::warn!(
            "predicted event count {} exceeds {} queries; clamping",
            count.predicted_count,
            scored.len()
        );
    }
    scored.truncate(count.predicted_count.min(scored.len()));
    sort_by_start(&mut scored);
    Ok(Selection { events: scored, clamped })
}

/// Stable sort by start time, then end time, then query index.
pub fn sort_by_start<T: Scalar>(events: &mut [CaptionedEvent<T>]) {
    events.sort_by(|a, b| {
        a.segment
            .start
            .partial_cmp(&b.segment.start)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.segment.end.partial_cmp(&b.segment.end).unwrap_or(std::cmp::Ordering::Equal))
            .then(a.query_index.cmp(&b.query_index))
    });
}

/// Pairs proposals with their captions and orders them by start time.
pub fn paragraph_events<T: Scalar>(proposals: &[Segment<T>], captions: &[CaptionHypothesis<T>]) -> Result<Vec<CaptionedEvent<T>>> {
    if proposals.is_empty() {
        return Err(Error::Input("no proposals given".into()));
    }
    if proposals.len() != captions.len() {
        return Err(Error::Input("one caption per proposal required".into()));
    }
    let mut events: Vec<CaptionedEvent<T>> = proposals
        .iter()
        .zip(captions)
        .enumerate()
        .map(|(i, (p, c))| CaptionedEvent {
            segment: *p,
            tokens: c.words().to_vec(),
            confidence: T::one(),
            query_index: i,
        })
        .collect();
    sort_by_start(&mut events);
    Ok(events)
}
