//! Labelled datasets, the synthetic blob-image generator, and the BNDS
//! fixture file (same container as BNIR: magic `"BNDS"`, JSON header, f32
//! inputs followed by u32 labels).

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::container::{self, BlobRef, BlobWriter};
use crate::ir::format::FormatError;
use crate::ir::Shape;

use super::model::Tensor;
use super::EngineError;

pub const MAGIC: &[u8; 4] = b"BNDS";

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    /// Per-sample dims, `[c, h, w]` or `[features]`.
    pub sample_shape: Vec<usize>,
    pub num_classes: usize,
    pub inputs: Vec<f32>,
    pub labels: Vec<u32>,
}

impl Dataset {
    pub fn new(sample_shape: Vec<usize>, num_classes: usize, inputs: Vec<f32>, labels: Vec<u32>) -> Result<Self, EngineError> {
        let ds = Self { sample_shape, num_classes, inputs, labels };
        ds.check()?;
        Ok(ds)
    }

    fn check(&self) -> Result<(), EngineError> {
        let shape = self
            .shape()
            .ok_or_else(|| EngineError::Shape(format!("bad sample shape {:?}", self.sample_shape)))?;
        if self.inputs.len() != self.labels.len() * shape.numel() {
            return Err(EngineError::Shape(format!(
                "{} input values for {} samples of {:?}",
                self.inputs.len(),
                self.labels.len(),
                self.sample_shape
            )));
        }
        if let Some(&label) = self.labels.iter().find(|&&l| l as usize >= self.num_classes) {
            return Err(EngineError::Label { label: label as usize, classes: self.num_classes });
        }
        Ok(())
    }

    pub fn shape(&self) -> Option<Shape> {
        Shape::from_dims(&self.sample_shape)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Stacks the given samples into a batch.
    pub fn batch(&self, indices: &[usize]) -> (Tensor, Vec<u32>) {
        let shape = self.shape().expect("checked on construction");
        let k = shape.numel();
        let mut data = Vec::with_capacity(indices.len() * k);
        for &i in indices {
            data.extend(self.inputs[i * k..(i + 1) * k].iter().map(|&v| v as f64));
        }
        let labels = indices.iter().map(|&i| self.labels[i]).collect();
        (Tensor { n: indices.len(), shape, data }, labels)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut blobs = BlobWriter::default();
        let inputs = blobs.push_f32(&self.inputs);
        let labels = blobs.push_u32(&self.labels);
        let blob_bytes = blobs.into_bytes();
        let header = DatasetHeader {
            sample_shape: self.sample_shape.clone(),
            num_classes: self.num_classes,
            num_samples: self.labels.len(),
            inputs,
            labels,
            blob_bytes: blob_bytes.len() as u64,
        };
        let header = serde_json::to_vec_pretty(&header).expect("plain struct serializes");
        container::encode(MAGIC, &header, &blob_bytes)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, FormatError> {
        let (header, blobs) = container::decode(MAGIC, bytes)?;
        let h: DatasetHeader = serde_json::from_slice(header).map_err(|e| FormatError::Header(e.to_string()))?;
        if blobs.len() as u64 != h.blob_bytes {
            return Err(FormatError::Truncated(format!(
                "blob section has {} bytes, header declares {}",
                blobs.len(),
                h.blob_bytes
            )));
        }
        let inputs = blobs.f32s(h.inputs, "inputs")?;
        let labels = blobs.u32s(h.labels, "labels")?;
        if labels.len() != h.num_samples {
            return Err(FormatError::Header(format!("{} labels, header says {}", labels.len(), h.num_samples)));
        }
        Dataset::new(h.sample_shape, h.num_classes, inputs, labels).map_err(|e| FormatError::Header(e.to_string()))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), FormatError> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, FormatError> {
        Self::from_bytes(&fs::read(path)?)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct DatasetHeader {
    sample_shape: Vec<usize>,
    num_classes: usize,
    num_samples: usize,
    inputs: BlobRef,
    labels: BlobRef,
    blob_bytes: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Validation,
}

/// Class-conditional Gaussian-blob images: every class owns one blob per
/// channel at a fixed position and amplitude; samples add i.i.d. noise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticDatasetCfg {
    pub num_classes: usize,
    pub samples_per_class: usize,
    pub image_size: usize,
    pub channels: usize,
    pub noise_std: f64,
    pub seed: u64,
}

impl Default for SyntheticDatasetCfg {
    fn default() -> Self {
        Self {
            num_classes: 4,
            samples_per_class: 64,
            image_size: 8,
            channels: 3,
            noise_std: 1.0,
            seed: 0,
        }
    }
}

impl SyntheticDatasetCfg {
    fn prototypes(&self) -> Vec<Vec<f64>> {
        let s = self.image_size;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let width = (s as f64 / 5.0).max(0.5);
        (0..self.num_classes)
            .map(|_| {
                let mut proto = vec![0.0; self.channels * s * s];
                for c in 0..self.channels {
                    let cy = rng.random_range(0.2..0.8) * s as f64;
                    let cx = rng.random_range(0.2..0.8) * s as f64;
                    let amp = rng.random_range(0.5..1.5) * if rng.random::<bool>() { 1.0 } else { -1.0 };
                    for y in 0..s {
                        for x in 0..s {
                            let d2 = (y as f64 + 0.5 - cy).powi(2) + (x as f64 + 0.5 - cx).powi(2);
                            proto[(c * s + y) * s + x] = amp * (-d2 / (2.0 * width * width)).exp();
                        }
                    }
                }
                proto
            })
            .collect()
    }

    /// Deterministic in `(self, split)`. Samples are interleaved by class.
    pub fn generate(&self, split: Split) -> Dataset {
        let protos = self.prototypes();
        let stream = match split {
            Split::Train => 1,
            Split::Validation => 2,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ (stream << 56));
        let k = self.channels * self.image_size * self.image_size;
        let n = self.num_classes * self.samples_per_class;
        let mut inputs = Vec::with_capacity(n * k);
        let mut labels = Vec::with_capacity(n);
        for _ in 0..self.samples_per_class {
            for (class, proto) in protos.iter().enumerate() {
                for &p in proto {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    inputs.push((p + self.noise_std * z) as f32);
                }
                labels.push(class as u32);
            }
        }
        Dataset {
            sample_shape: vec![self.channels, self.image_size, self.image_size],
            num_classes: self.num_classes,
            inputs,
            labels,
        }
    }
}
