//! Binary checkpoint archive.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic     8 bytes  "DCAPCKPT"
//! version   u32      1
//! header    u64 length, then that many bytes of UTF-8 JSON:
//!           {"dtype": "f32"|"f64", "meta": <any JSON>,
//!            "tensors": [{"name", "rows", "cols", "offset"}]}
//! data      tensors back to back, row-major, `offset` counted in
//!           elements from the start of this section
//! ```
//!
//! Values are stored with their exact bit patterns, so a write/read round
//! trip is lossless.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"DCAPCKPT";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    rows: usize,
    cols: usize,
    offset: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Header {
    dtype: String,
    meta: serde_json::Value,
    tensors: Vec<TensorEntry>,
}

/// Named tensors plus free-form JSON metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint<T> {
    pub meta: serde_json::Value,
    pub tensors: Vec<(String, Tensor<T>)>,
}

impl<T: Scalar> Checkpoint<T> {
    pub fn new(meta: serde_json::Value) -> Self {
        Self {
            meta,
            tensors: Vec::new(),
        }
    }

    pub fn push(&mut self, name: impl Into<String>, tensor: Tensor<T>) {
        self.tensors.push((name.into(), tensor));
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    /// Tensor `name`, checked against the expected shape.
    pub fn take(&self, name: &str, shape: (usize, usize)) -> Result<Tensor<T>> {
        let t = self
            .get(name)
            .ok_or_else(|| Error::Checkpoint(format!("missing tensor {name}")))?;
        if t.shape() != shape {
            return Err(Error::Checkpoint(format!(
                "tensor {name} has shape {:?}, expected {shape:?}",
                t.shape()
            )));
        }
        Ok(t.clone())
    }

    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        let mut offset = 0;
        let tensors = self
            .tensors
            .iter()
            .map(|(name, t)| {
                let e = TensorEntry {
                    name: name.clone(),
                    rows: t.rows(),
                    cols: t.cols(),
                    offset,
                };
                offset += t.len();
                e
            })
            .collect();
        let header = Header {
            dtype: T::DTYPE.to_string(),
            meta: self.meta.clone(),
            tensors,
        };
        let header = serde_json::to_vec(&header)?;
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&(header.len() as u64).to_le_bytes())?;
        w.write_all(&header)?;
        let mut buf = Vec::with_capacity(offset * T::BYTES);
        for (_, t) in &self.tensors {
            for &v in t.data() {
                v.write_le(&mut buf);
            }
        }
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn read_from(mut r: impl Read) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Checkpoint("not a checkpoint file".into()));
        }
        let mut word = [0u8; 4];
        r.read_exact(&mut word)?;
        let version = u32::from_le_bytes(word);
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported checkpoint version {version}")));
        }
        let mut long = [0u8; 8];
        r.read_exact(&mut long)?;
        let len = usize::try_from(u64::from_le_bytes(long)).map_err(|_| Error::Checkpoint("header too large".into()))?;
        let mut header = vec![0u8; len];
        r.read_exact(&mut header)?;
        let header: Header = serde_json::from_slice(&header)?;
        if header.dtype != T::DTYPE {
            return Err(Error::Checkpoint(format!(
                "checkpoint holds {} values, expected {}",
                header.dtype,
                T::DTYPE
            )));
        }
        let mut data = Vec::new();
        r.read_to_end(&mut data)?;
        let mut tensors = Vec::with_capacity(header.tensors.len());
        for e in header.tensors {
            let n = e.rows * e.cols;
            let lo = e.offset * T::BYTES;
            let hi = lo + n * T::BYTES;
            let bytes = data
                .get(lo..hi)
                .ok_or_else(|| Error::Checkpoint(format!("tensor {} runs past the end of the file", e.name)))?;
            let values = bytes.chunks_exact(T::BYTES).map(T::read_le).collect();
            tensors.push((e.name, Tensor::from_vec(e.rows, e.cols, values)));
        }
        Ok(Self {
            meta: header.meta,
            tensors,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(file);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::read_from(std::io::BufReader::new(file))
    }
}
