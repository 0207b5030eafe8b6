//! Prediction and proposal JSON files.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::annotations::parse_annotations;
use crate::error::{io_err, json_err, video_err, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictedEvent {
    pub sentence: String,
    /// Seconds.
    pub timestamp: [f64; 2],
    pub confidence: f64,
}

/// `{video_id: [event, ...]}`.
pub type PredictionFile = BTreeMap<String, Vec<PredictedEvent>>;

pub fn parse_predictions(text: &str, path: &Path) -> Result<PredictionFile> {
    let file: PredictionFile = serde_json::from_str(text).map_err(json_err(path))?;
    for (id, events) in &file {
        for e in events {
            let [s, t] = e.timestamp;
            if !(s.is_finite() && t.is_finite() && e.confidence.is_finite()) || s > t {
                return Err(video_err(id, format!("invalid predicted timestamp [{s}, {t}]")));
            }
        }
    }
    Ok(file)
}

pub fn load_predictions(path: &Path) -> Result<PredictionFile> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    parse_predictions(&text, path)
}

pub fn save_predictions(path: &Path, preds: &PredictionFile) -> Result<()> {
    let text = serde_json::to_string_pretty(preds).expect("predictions serialize");
    std::fs::write(path, text).map_err(io_err(path))
}

/// Proposals per video in seconds. Accepts `{video_id: [[s, e], ...]}` or
/// an annotation file, whose timestamps are used.
pub fn load_proposals(path: &Path) -> Result<BTreeMap<String, Vec<[f64; 2]>>> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    if let Ok(plain) = serde_json::from_str::<BTreeMap<String, Vec<[f64; 2]>>>(&text) {
        for (id, segs) in &plain {
            if segs.iter().any(|[s, e]| !(s.is_finite() && e.is_finite()) || s > e || *s < 0.0) {
                return Err(video_err(id, "invalid proposal timestamp"));
            }
        }
        return Ok(plain);
    }
    let records = parse_annotations(&text, path)?;
    Ok(records
        .into_iter()
        .map(|r| (r.video_id, r.events.iter().map(|e| [e.start, e.end]).collect()))
        .collect())
}
