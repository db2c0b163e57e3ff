//! Single-file model container.
//!
//! ```text
//! offset  size  field
//! 0       4     magic "KWSM"
//! 4       4     version, u32 little-endian (1)
//! 8       4     header length H, u32 little-endian
//! 12      H     UTF-8 JSON header: architecture, label names, tensor manifest
//! 12+H    4*N   payload: f32 little-endian, tensors in manifest order
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::arch::{forward, ArchSpec, NamedTensor, WeightSet};
use crate::error::{KwsError, Result};
use crate::frontend::{Frontend, Waveform};
use crate::posterior::{detect, DetectionEvent, DetectorConfig, PosteriorFrame};

pub const MAGIC: &[u8; 4] = b"KWSM";
pub const VERSION: u32 = 1;
const PREAMBLE: usize = 12;

/// Class name reserved for the non-keyword class.
pub const FILLER_LABEL: &str = "_filler";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    arch: ArchSpec,
    labels: Vec<String>,
    tensors: Vec<TensorEntry>,
}

/// Architecture, weights and label names travelling together.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub arch: ArchSpec,
    pub weights: WeightSet<f32>,
    pub labels: Vec<String>,
}

impl Model {
    pub fn new(arch: ArchSpec, weights: WeightSet<f32>, labels: Vec<String>) -> Result<Self> {
        weights.check(&arch)?;
        if labels.len() != arch.labels() {
            return Err(KwsError::InvalidConfig(format!(
                "{} label names for an architecture with {} outputs",
                labels.len(),
                arch.labels()
            )));
        }
        Ok(Model { arch, weights, labels })
    }

    /// Index of the `_filler` class, if present.
    pub fn filler_index(&self) -> Option<usize> {
        self.labels.iter().position(|l| l == FILLER_LABEL)
    }

    /// One posterior per frame of `wave`, each from the context window
    /// centred on that frame.
    pub fn posteriors(&self, frontend: &Frontend, wave: &Waveform) -> Result<Vec<PosteriorFrame>> {
        frontend
            .windows(wave, self.arch.context)?
            .iter()
            .enumerate()
            .map(|(j, window)| {
                let p = forward(&self.arch, &self.weights, window)?;
                Ok(PosteriorFrame::new(j, p.into_iter().map(f64::from)))
            })
            .collect()
    }

    /// Runs the detector over `wave` with this model's filler class excluded.
    pub fn detect(&self, frontend: &Frontend, wave: &Waveform, cfg: &DetectorConfig) -> Result<Vec<DetectionEvent>> {
        let cfg = DetectorConfig {
            filler: self.filler_index(),
            ..cfg.clone()
        };
        detect(&self.posteriors(frontend, wave)?, &cfg)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        self.weights.check(&self.arch)?;
        let header = Header {
            arch: self.arch.clone(),
            labels: self.labels.clone(),
            tensors: self
                .weights
                .tensors()
                .iter()
                .map(|t| TensorEntry {
                    name: t.name.clone(),
                    shape: t.shape.clone(),
                })
                .collect(),
        };
        let header = serde_json::to_vec(&header).map_err(|e| KwsError::MalformedModel(e.to_string()))?;
        let header_len = u32::try_from(header.len()).map_err(|_| KwsError::MalformedModel("header too large".into()))?;
        let mut out = Vec::with_capacity(PREAMBLE + header.len() + 4 * self.weights.param_count());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&header_len.to_le_bytes());
        out.extend_from_slice(&header);
        for t in self.weights.tensors() {
            for v in &t.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 4 || &bytes[..4] != MAGIC {
            return Err(KwsError::NotAModelFile);
        }
        if bytes.len() < PREAMBLE {
            return Err(KwsError::Truncated {
                expected: PREAMBLE,
                found: bytes.len(),
            });
        }
        let word = |at: usize| u32::from_le_bytes([bytes[at], bytes[at + 1], bytes[at + 2], bytes[at + 3]]);
        let version = word(4);
        if version != VERSION {
            return Err(KwsError::UnsupportedVersion(version));
        }
        let header_end = PREAMBLE + word(8) as usize;
        if bytes.len() < header_end {
            return Err(KwsError::Truncated {
                expected: header_end,
                found: bytes.len(),
            });
        }
        let header: Header =
            serde_json::from_slice(&bytes[PREAMBLE..header_end]).map_err(|e| KwsError::MalformedModel(e.to_string()))?;

        let element_count: usize = header.tensors.iter().map(|t| t.shape.iter().product::<usize>()).sum();
        let expected = header_end + 4 * element_count;
        if bytes.len() < expected {
            return Err(KwsError::Truncated {
                expected,
                found: bytes.len(),
            });
        }
        if bytes.len() > expected {
            return Err(KwsError::MalformedModel(format!(
                "{} trailing bytes after payload",
                bytes.len() - expected
            )));
        }

        let mut floats = bytes[header_end..]
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]));
        let tensors = header
            .tensors
            .into_iter()
            .map(|entry| {
                let len = entry.shape.iter().product();
                NamedTensor {
                    name: entry.name,
                    data: floats.by_ref().take(len).collect(),
                    shape: entry.shape,
                }
            })
            .collect();
        let weights = WeightSet::from_tensors(tensors);

        let arch = header.arch;
        arch.validate().map_err(|e| KwsError::MalformedModel(e.to_string()))?;
        if !weights.is_finite() {
            return Err(KwsError::MalformedModel("non-finite weights".into()));
        }
        Model::new(arch, weights, header.labels)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

/// Writes `arch` + `weights` + `labels` to `path`.
pub fn save(arch: &ArchSpec, weights: &WeightSet<f32>, labels: &[String], path: impl AsRef<Path>) -> Result<()> {
    Model::new(arch.clone(), weights.clone(), labels.to_vec())?.save(path)
}

pub fn load(path: impl AsRef<Path>) -> Result<Model> {
    Model::load(path)
}
