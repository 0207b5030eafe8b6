//! Raw feature files: `<video_id>.bin` holds `T_raw x C_in` little-endian
//! `f32` values in row-major order; `<video_id>.json` is the sidecar
//! `{"video_id", "T_raw", "C_in", "duration"}`.

use std::path::{Path, PathBuf};

use densecap_core::features::FrameFeatureSequence;
use densecap_core::tensor::Tensor;
use serde::{Deserialize, Serialize};

use crate::error::{io_err, json_err, video_err, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureSidecar {
    pub video_id: String,
    #[serde(rename = "T_raw")]
    pub t_raw: usize,
    #[serde(rename = "C_in")]
    pub c_in: usize,
    pub duration: f64,
}

pub fn feature_paths(dir: &Path, video_id: &str) -> (PathBuf, PathBuf) {
    (dir.join(format!("{video_id}.bin")), dir.join(format!("{video_id}.json")))
}

pub fn write_features(dir: &Path, video_id: &str, features: &Tensor<f32>, duration: f64) -> Result<()> {
    let (bin, json) = feature_paths(dir, video_id);
    let mut bytes = Vec::with_capacity(features.len() * 4);
    for v in features.data() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    std::fs::write(&bin, bytes).map_err(io_err(&bin))?;
    let sidecar = FeatureSidecar {
        video_id: video_id.to_string(),
        t_raw: features.rows(),
        c_in: features.cols(),
        duration,
    };
    let text = serde_json::to_string_pretty(&sidecar).expect("sidecar serializes");
    std::fs::write(&json, text).map_err(io_err(&json))
}

pub fn read_sidecar(dir: &Path, video_id: &str) -> Result<FeatureSidecar> {
    let (_, json) = feature_paths(dir, video_id);
    let text = std::fs::read_to_string(&json).map_err(io_err(&json))?;
    let sidecar: FeatureSidecar = serde_json::from_str(&text).map_err(json_err(&json))?;
    if sidecar.video_id != video_id {
        return Err(video_err(video_id, format!("sidecar names video {}", sidecar.video_id)));
    }
    Ok(sidecar)
}

pub fn read_features(dir: &Path, video_id: &str) -> Result<FrameFeatureSequence<f32>> {
    let sidecar = read_sidecar(dir, video_id)?;
    let (bin, _) = feature_paths(dir, video_id);
    let bytes = std::fs::read(&bin).map_err(io_err(&bin))?;
    let expected = sidecar.t_raw * sidecar.c_in * 4;
    if bytes.len() != expected {
        return Err(video_err(
            video_id,
            format!("feature file has {} bytes, sidecar implies {expected}", bytes.len()),
        ));
    }
    let data = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    let features = Tensor::from_vec(sidecar.t_raw, sidecar.c_in, data);
    FrameFeatureSequence::new(features, sidecar.duration).map_err(|e| video_err(video_id, e.to_string()))
}
