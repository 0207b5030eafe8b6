//! Deterministic synthetic corpora: per-class feature signatures planted
//! inside event segments over Gaussian noise, with templated captions that
//! name the class and an attribute that is also planted in the features.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use densecap_core::geometry::Segment;
use densecap_core::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::annotations::{save_annotations, AnnotatedEvent, AnnotationRecord};
use crate::error::{io_err, DataError, Result};
use crate::features_io::write_features;
use crate::vocab::Vocabulary;

/// Subject, verb and object phrase of each event class.
const CLASSES: [(&str, &str, &str); 12] = [
    ("man", "runs", "along the track"),
    ("woman", "swims", "in the pool"),
    ("dog", "jumps", "over the fence"),
    ("boy", "rides", "a bike"),
    ("girl", "plays", "the piano"),
    ("chef", "cuts", "the vegetables"),
    ("player", "kicks", "the ball"),
    ("painter", "paints", "a wall"),
    ("cat", "climbs", "a tree"),
    ("child", "throws", "a frisbee"),
    ("dancer", "spins", "on the stage"),
    ("worker", "lifts", "a heavy box"),
];

const ATTRIBUTES: [&str; 4] = ["slowly", "quickly", "carefully", "happily"];

/// Number of sentence templates per class.
pub const TEMPLATES: usize = 2;

/// Caption of a class/attribute pair under one template.
pub fn realize_caption(event_class: usize, attribute: usize, template: usize) -> String {
    let (subject, verb, object) = CLASSES[event_class];
    let adverb = ATTRIBUTES[attribute];
    match template % TEMPLATES {
        0 => format!("a {subject} {verb} {object} {adverb}"),
        _ => format!("the {subject} {adverb} {verb} {object}"),
    }
}

/// Every word any template can produce, sorted.
pub fn catalog_vocabulary() -> Vocabulary {
    let mut words: Vec<String> = Vec::new();
    for c in 0..CLASSES.len() {
        for a in 0..ATTRIBUTES.len() {
            for t in 0..TEMPLATES {
                words.extend(realize_caption(c, a, t).split(' ').map(str::to_string));
            }
        }
    }
    words.sort();
    words.dedup();
    Vocabulary::new(words)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    /// Seeds the class and attribute signatures; share it between corpora
    /// that must be mutually consistent (train/validation/test).
    pub catalog_seed: u64,
    pub num_classes: usize,
    pub num_attributes: usize,
    pub input_dim: usize,
    pub t_raw_min: usize,
    pub t_raw_max: usize,
    pub duration_min: f64,
    pub duration_max: f64,
    pub min_events: usize,
    pub max_events: usize,
    /// Fractions of the duration.
    pub min_length: f64,
    pub max_length: f64,
    /// Largest allowed intersection between two events as a fraction of
    /// the shorter one.
    pub max_overlap: f64,
    /// Standard deviation of the background noise.
    pub noise: f64,
    /// Standard deviation of signature entries.
    pub class_strength: f64,
    pub attribute_strength: f64,
    pub id_prefix: String,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            catalog_seed: 2024,
            num_classes: 12,
            num_attributes: 4,
            input_dim: 32,
            t_raw_min: 48,
            t_raw_max: 96,
            duration_min: 30.0,
            duration_max: 120.0,
            min_events: 1,
            max_events: 5,
            min_length: 0.05,
            max_length: 0.35,
            max_overlap: 0.3,
            noise: 0.5,
            class_strength: 1.0,
            attribute_strength: 0.6,
            id_prefix: "video".into(),
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(DataError::Config(m.to_string()));
        if self.num_classes == 0 || self.num_classes > CLASSES.len() {
            return fail("num_classes must be in 1..=12");
        }
        if self.num_attributes == 0 || self.num_attributes > ATTRIBUTES.len() {
            return fail("num_attributes must be in 1..=4");
        }
        if self.input_dim == 0 {
            return fail("input_dim must be positive");
        }
        if self.t_raw_min == 0 || self.t_raw_min > self.t_raw_max {
            return fail("need 1 <= t_raw_min <= t_raw_max");
        }
        if !(self.duration_min > 0.0 && self.duration_min <= self.duration_max && self.duration_max.is_finite()) {
            return fail("need 0 < duration_min <= duration_max");
        }
        if self.min_events == 0 || self.min_events > self.max_events {
            return fail("need 1 <= min_events <= max_events");
        }
        if !(self.min_length > 0.0 && self.min_length <= self.max_length && self.max_length <= 1.0) {
            return fail("need 0 < min_length <= max_length <= 1");
        }
        if !(0.0..=1.0).contains(&self.max_overlap) {
            return fail("max_overlap must be in [0, 1]");
        }
        if !(self.noise >= 0.0 && self.class_strength >= 0.0 && self.attribute_strength >= 0.0) {
            return fail("noise and signature strengths must be non-negative");
        }
        // Each event needs at least this much time of its own.
        if self.max_events as f64 * self.min_length * (1.0 - self.max_overlap) > 1.0 {
            return Err(DataError::Config(format!(
                "{} events of length >= {} cannot fit with overlap <= {}",
                self.max_events, self.min_length, self.max_overlap
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticEventSpec {
    pub event_class: usize,
    pub attribute: usize,
    pub template: usize,
    pub segment: Segment<f64>,
    pub caption: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticVideo {
    pub video_id: String,
    pub duration: f64,
    pub features: Tensor<f32>,
    /// Sorted by start time.
    pub events: Vec<SyntheticEventSpec>,
}

impl SyntheticVideo {
    pub fn annotation(&self) -> AnnotationRecord {
        AnnotationRecord {
            video_id: self.video_id.clone(),
            duration_seconds: self.duration,
            events: self
                .events
                .iter()
                .map(|e| AnnotatedEvent {
                    start: e.segment.start * self.duration,
                    end: e.segment.end * self.duration,
                    sentence: e.caption.clone(),
                })
                .collect(),
        }
    }
}

/// Class and attribute signature vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct Catalog {
    pub classes: Vec<Vec<f32>>,
    pub attributes: Vec<Vec<f32>>,
}

impl Catalog {
    pub fn new(cfg: &SynthConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.catalog_seed);
        let mut draw = |n: usize, scale: f64| -> Vec<Vec<f32>> {
            (0..n)
                .map(|_| {
                    (0..cfg.input_dim)
                        .map(|_| (rng.sample::<f64, _>(StandardNormal) * scale) as f32)
                        .collect()
                })
                .collect()
        };
        let classes = draw(cfg.num_classes, cfg.class_strength);
        let attributes = draw(cfg.num_attributes, cfg.attribute_strength);
        Self { classes, attributes }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub videos: Vec<SyntheticVideo>,
    pub vocab: Vocabulary,
}

/// Seed of video `index` derived from the corpus seed.
fn video_seed(seed: u64, index: usize) -> u64 {
    let mut z = seed ^ (index as u64).wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn round_to(v: f64, step: f64) -> f64 {
    (v / step).round() * step
}

fn place_events(rng: &mut ChaCha8Rng, cfg: &SynthConfig, count: usize, duration: f64) -> Option<Vec<Segment<f64>>> {
    const TRIES: usize = 200;
    let mut placed: Vec<Segment<f64>> = Vec::with_capacity(count);
    for _ in 0..count {
        let mut ok = false;
        for _ in 0..TRIES {
            let len = rng.random_range(cfg.min_length..=cfg.max_length);
            let start = rng.random_range(0.0..=(1.0 - len));
            // Timestamps are kept at centisecond resolution.
            let s = round_to(start * duration, 0.01).max(0.0);
            let e = round_to((start + len) * duration, 0.01).min(duration);
            let seg = Segment {
                start: s / duration,
                end: e / duration,
            };
            if seg.length() < cfg.min_length * 0.999 {
                continue;
            }
            let fits = placed.iter().all(|p| {
                let inter = (p.end.min(seg.end) - p.start.max(seg.start)).max(0.0);
                inter <= cfg.max_overlap * p.length().min(seg.length())
            });
            if fits {
                placed.push(seg);
                ok = true;
                break;
            }
        }
        if !ok {
            return None;
        }
    }
    Some(placed)
}

fn generate_video(seed: u64, index: usize, cfg: &SynthConfig, catalog: &Catalog) -> Result<SyntheticVideo> {
    let mut rng = ChaCha8Rng::seed_from_u64(video_seed(seed, index));
    let video_id = format!("{}_{index:05}", cfg.id_prefix);
    let t_raw = rng.random_range(cfg.t_raw_min..=cfg.t_raw_max);
    let duration = round_to(rng.random_range(cfg.duration_min..=cfg.duration_max), 0.01);
    let count = rng.random_range(cfg.min_events..=cfg.max_events);
    let mut segments = None;
    for _ in 0..50 {
        segments = place_events(&mut rng, cfg, count, duration);
        if segments.is_some() {
            break;
        }
    }
    let mut segments = segments.ok_or_else(|| {
        DataError::Config(format!("could not place {count} events in {video_id}; relax the overlap or length bounds"))
    })?;
    segments.sort_by(|a, b| a.start.total_cmp(&b.start).then(a.end.total_cmp(&b.end)));
    let events: Vec<SyntheticEventSpec> = segments
        .into_iter()
        .map(|segment| {
            let event_class = rng.random_range(0..cfg.num_classes);
            let attribute = rng.random_range(0..cfg.num_attributes);
            let template = rng.random_range(0..TEMPLATES);
            SyntheticEventSpec {
                event_class,
                attribute,
                template,
                segment,
                caption: realize_caption(event_class, attribute, template),
            }
        })
        .collect();
    let mut data = Vec::with_capacity(t_raw * cfg.input_dim);
    for t in 0..t_raw {
        let frac = (t as f64 + 0.5) / t_raw as f64;
        let mut row: Vec<f32> = (0..cfg.input_dim)
            .map(|_| (rng.sample::<f64, _>(StandardNormal) * cfg.noise) as f32)
            .collect();
        for e in events.iter().filter(|e| e.segment.start <= frac && frac < e.segment.end) {
            for (k, v) in row.iter_mut().enumerate() {
                *v += catalog.classes[e.event_class][k] + catalog.attributes[e.attribute][k];
            }
        }
        data.extend(row);
    }
    Ok(SyntheticVideo {
        video_id,
        duration,
        features: Tensor::from_vec(t_raw, cfg.input_dim, data),
        events,
    })
}

/// Generates `n_videos` videos; identical `(seed, config)` give identical
/// corpora regardless of thread count.
pub fn generate(seed: u64, n_videos: usize, cfg: &SynthConfig) -> Result<Corpus> {
    cfg.validate()?;
    let catalog = Catalog::new(cfg);
    let videos = (0..n_videos)
        .into_par_iter()
        .map(|i| generate_video(seed, i, cfg, &catalog))
        .collect::<Result<Vec<_>>>()?;
    Ok(Corpus {
        videos,
        vocab: catalog_vocabulary(),
    })
}

/// File layout of a corpus directory.
#[derive(Debug, Clone, PartialEq)]
pub struct CorpusPaths {
    pub root: PathBuf,
    pub features: PathBuf,
    pub annotations: PathBuf,
    pub vocab: PathBuf,
    pub metadata: PathBuf,
}

impl CorpusPaths {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        let root = root.into();
        Self {
            features: root.join("features"),
            annotations: root.join("annotations.json"),
            vocab: root.join("vocab.txt"),
            metadata: root.join("metadata.json"),
            root,
        }
    }
}

/// Ground-truth construction metadata of one event.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventMetadata {
    pub event_class: usize,
    pub class_word: String,
    pub attribute: usize,
    pub attribute_word: String,
    pub template: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusSummary {
    pub videos: usize,
    pub events: usize,
    pub vocab_size: usize,
}

impl Corpus {
    pub fn summary(&self) -> CorpusSummary {
        CorpusSummary {
            videos: self.videos.len(),
            events: self.videos.iter().map(|v| v.events.len()).sum(),
            vocab_size: self.vocab.len(),
        }
    }

    pub fn metadata(&self) -> BTreeMap<String, Vec<EventMetadata>> {
        self.videos
            .iter()
            .map(|v| {
                let events = v
                    .events
                    .iter()
                    .map(|e| EventMetadata {
                        event_class: e.event_class,
                        class_word: CLASSES[e.event_class].0.to_string(),
                        attribute: e.attribute,
                        attribute_word: ATTRIBUTES[e.attribute].to_string(),
                        template: e.template,
                    })
                    .collect();
                (v.video_id.clone(), events)
            })
            .collect()
    }

    /// Writes features, annotations, vocabulary and metadata under `root`.
    pub fn write(&self, root: &Path) -> Result<CorpusPaths> {
        let paths = CorpusPaths::new(root);
        std::fs::create_dir_all(&paths.features).map_err(io_err(&paths.features))?;
        for v in &self.videos {
            write_features(&paths.features, &v.video_id, &v.features, v.duration)?;
        }
        let records: Vec<AnnotationRecord> = self.videos.iter().map(SyntheticVideo::annotation).collect();
        save_annotations(&paths.annotations, &records)?;
        self.vocab.save(&paths.vocab)?;
        let meta = serde_json::to_string_pretty(&self.metadata()).expect("metadata serializes");
        std::fs::write(&paths.metadata, meta).map_err(io_err(&paths.metadata))?;
        Ok(paths)
    }
}

/// Generates a corpus and writes it to `root`.
pub fn generate_corpus(seed: u64, n_videos: usize, cfg: &SynthConfig, root: &Path) -> Result<CorpusSummary> {
    let corpus = generate(seed, n_videos, cfg)?;
    corpus.write(root)?;
    Ok(corpus.summary())
}

/// Class word of an event class.
pub fn class_word(event_class: usize) -> &'static str {
    CLASSES[event_class].0
}

pub fn attribute_word(attribute: usize) -> &'static str {
    ATTRIBUTES[attribute]
}
