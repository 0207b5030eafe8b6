//! Annotation JSON in the common dense-captioning shape:
//! `{video_id: {"duration": s, "timestamps": [[s, e], ...], "sentences": [...]}}`.

use std::collections::BTreeMap;
use std::path::Path;

use densecap_core::geometry::Segment;
use serde::{Deserialize, Serialize};

use crate::error::{io_err, json_err, video_err, Result};

/// One annotated event: a timestamp pair in seconds and its sentence.
#[derive(Debug, Clone, PartialEq)]
pub struct AnnotatedEvent {
    pub start: f64,
    pub end: f64,
    pub sentence: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnnotationRecord {
    pub video_id: String,
    pub duration_seconds: f64,
    pub events: Vec<AnnotatedEvent>,
}

impl AnnotationRecord {
    pub fn validate(&self) -> Result<()> {
        let id = &self.video_id;
        if !(self.duration_seconds.is_finite() && self.duration_seconds > 0.0) {
            return Err(video_err(id, format!("invalid duration {}", self.duration_seconds)));
        }
        if self.events.is_empty() {
            return Err(video_err(id, "no events"));
        }
        for e in &self.events {
            if !(e.start.is_finite() && e.end.is_finite()) || e.start < 0.0 || e.end > self.duration_seconds || e.start > e.end {
                return Err(video_err(
                    id,
                    format!("timestamp [{}, {}] outside [0, {}]", e.start, e.end, self.duration_seconds),
                ));
            }
        }
        Ok(())
    }

    /// Event segments as fractions of the duration.
    pub fn normalized_segments(&self) -> Vec<Segment<f64>> {
        self.events
            .iter()
            .map(|e| Segment {
                start: (e.start / self.duration_seconds).clamp(0.0, 1.0),
                end: (e.end / self.duration_seconds).clamp(0.0, 1.0),
            })
            .collect()
    }

    pub fn sentences(&self) -> impl Iterator<Item = &str> {
        self.events.iter().map(|e| e.sentence.as_str())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRecord {
    duration: f64,
    timestamps: Vec<[f64; 2]>,
    sentences: Vec<String>,
}

/// Parses annotation JSON text; records come back sorted by video id.
pub fn parse_annotations(text: &str, path: &Path) -> Result<Vec<AnnotationRecord>> {
    let raw: BTreeMap<String, RawRecord> = serde_json::from_str(text).map_err(json_err(path))?;
    raw.into_iter()
        .map(|(video_id, r)| {
            if r.timestamps.len() != r.sentences.len() {
                return Err(video_err(
                    &video_id,
                    format!("{} timestamps but {} sentences", r.timestamps.len(), r.sentences.len()),
                ));
            }
            let rec = AnnotationRecord {
                events: r
                    .timestamps
                    .iter()
                    .zip(r.sentences)
                    .map(|(t, sentence)| AnnotatedEvent {
                        start: t[0],
                        end: t[1],
                        sentence,
                    })
                    .collect(),
                duration_seconds: r.duration,
                video_id,
            };
            rec.validate()?;
            Ok(rec)
        })
        .collect()
}

pub fn load_annotations(path: &Path) -> Result<Vec<AnnotationRecord>> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    parse_annotations(&text, path)
}

pub fn annotations_to_json(records: &[AnnotationRecord]) -> String {
    let map: BTreeMap<&str, RawRecord> = records
        .iter()
        .map(|r| {
            (
                r.video_id.as_str(),
                RawRecord {
                    duration: r.duration_seconds,
                    timestamps: r.events.iter().map(|e| [e.start, e.end]).collect(),
                    sentences: r.events.iter().map(|e| e.sentence.clone()).collect(),
                },
            )
        })
        .collect();
    serde_json::to_string_pretty(&map).expect("annotation maps serialize")
}

pub fn save_annotations(path: &Path, records: &[AnnotationRecord]) -> Result<()> {
    std::fs::write(path, annotations_to_json(records)).map_err(io_err(path))
}
