//! Shared domain types: clips, feature sequences, labelled samples and
//! dataset manifests.

use alloc::collections::BTreeSet;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;
use core::hash::Hasher;
use core::str::FromStr;

use crate::error::{Error, Result};

/// A fixed-length stack of grayscale frames, `T × H × W`, row-major per frame.
#[derive(Debug, Clone, PartialEq)]
pub struct ClipTensor {
    height: usize,
    width: usize,
    num_frames: usize,
    frame_rate_hz: f64,
    timestamp_s: f64,
    pixels: Vec<f32>,
}

impl ClipTensor {
    pub fn new(
        num_frames: usize,
        height: usize,
        width: usize,
        frame_rate_hz: f64,
        timestamp_s: f64,
        pixels: Vec<f32>,
    ) -> Result<Self> {
        if num_frames < 2 {
            return Err(Error::invalid("clip", "a clip needs at least 2 frames"));
        }
        if height == 0 || width == 0 {
            return Err(Error::invalid("clip", "frame dimensions must be positive"));
        }
        if !(frame_rate_hz.is_finite() && frame_rate_hz > 0.0) {
            return Err(Error::invalid("clip", "frame rate must be positive"));
        }
        if !timestamp_s.is_finite() {
            return Err(Error::NonFinite("clip timestamp"));
        }
        let expected = num_frames * height * width;
        if pixels.len() != expected {
            return Err(Error::DimensionMismatch {
                what: "clip pixels",
                expected,
                found: pixels.len(),
            });
        }
        if let Some(p) = pixels.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(Error::invalid(
                "clip",
                alloc::format!("pixel value {p} outside [0, 1]"),
            ));
        }
        Ok(Self {
            height,
            width,
            num_frames,
            frame_rate_hz,
            timestamp_s,
            pixels,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn num_frames(&self) -> usize {
        self.num_frames
    }

    pub fn frame_rate_hz(&self) -> f64 {
        self.frame_rate_hz
    }

    pub fn timestamp_s(&self) -> f64 {
        self.timestamp_s
    }

    pub fn duration_s(&self) -> f64 {
        self.num_frames as f64 / self.frame_rate_hz
    }

    pub fn frame(&self, t: usize) -> &[f32] {
        let n = self.height * self.width;
        &self.pixels[t * n..(t + 1) * n]
    }

    pub fn pixels(&self) -> &[f32] {
        &self.pixels
    }
}

/// Per-frame feature vectors stored frame-major: frame `t` occupies
/// `values[t * D..(t + 1) * D]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSequence {
    num_features: usize,
    num_frames: usize,
    values: Vec<f64>,
    mean_subtracted: bool,
}

impl FeatureSequence {
    pub fn new(num_features: usize, num_frames: usize, values: Vec<f64>) -> Result<Self> {
        if num_features == 0 || num_frames == 0 {
            return Err(Error::EmptySequence);
        }
        let expected = num_features
            .checked_mul(num_frames)
            .ok_or_else(|| Error::invalid("feature sequence", "dimension overflow"))?;
        if values.len() != expected {
            return Err(Error::DimensionMismatch {
                what: "feature values",
                expected,
                found: values.len(),
            });
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteFeature {
                frame: i / num_features,
                feature: i % num_features,
            });
        }
        Ok(Self {
            num_features,
            num_frames,
            values,
            mean_subtracted: false,
        })
    }

    /// Builds from rows indexed `[frame][feature]`.
    pub fn from_frames<R: AsRef<[f64]>>(frames: &[R]) -> Result<Self> {
        let Some(first) = frames.first() else {
            return Err(Error::EmptySequence);
        };
        let d = first.as_ref().len();
        let mut values = Vec::with_capacity(d * frames.len());
        for f in frames {
            let f = f.as_ref();
            if f.len() != d {
                return Err(Error::InconsistentFeatureDimension {
                    expected: d,
                    found: f.len(),
                });
            }
            values.extend_from_slice(f);
        }
        Self::new(d, frames.len(), values)
    }

    pub(crate) fn with_mean_subtracted(mut self) -> Self {
        self.mean_subtracted = true;
        self
    }

    pub fn num_features(&self) -> usize {
        self.num_features
    }

    pub fn num_frames(&self) -> usize {
        self.num_frames
    }

    pub fn mean_subtracted(&self) -> bool {
        self.mean_subtracted
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn frame(&self, t: usize) -> &[f64] {
        &self.values[t * self.num_features..(t + 1) * self.num_features]
    }

    pub fn get(&self, feature: usize, frame: usize) -> f64 {
        self.values[frame * self.num_features + feature]
    }

    pub fn frames(&self) -> impl DoubleEndedIterator<Item = &[f64]> + ExactSizeIterator {
        self.values.chunks_exact(self.num_features)
    }

    /// Returns a copy with `offset` added to every value of `feature`.
    pub fn offset_feature(&self, feature: usize, offset: f64) -> Result<Self> {
        if feature >= self.num_features {
            return Err(Error::DimensionMismatch {
                what: "feature index",
                expected: self.num_features,
                found: feature,
            });
        }
        let mut values = self.values.clone();
        for frame in values.chunks_exact_mut(self.num_features) {
            frame[feature] += offset;
        }
        Self::new(self.num_features, self.num_frames, values)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SourceTag {
    TrainFlag,
    TrainTree,
    AdjacentFlag,
    Tunnel,
    Synthetic,
}

impl SourceTag {
    pub const ALL: [SourceTag; 5] = [
        SourceTag::TrainFlag,
        SourceTag::TrainTree,
        SourceTag::AdjacentFlag,
        SourceTag::Tunnel,
        SourceTag::Synthetic,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SourceTag::TrainFlag => "train_flag",
            SourceTag::TrainTree => "train_tree",
            SourceTag::AdjacentFlag => "adjacent_flag",
            SourceTag::Tunnel => "tunnel",
            SourceTag::Synthetic => "synthetic",
        }
    }
}

impl fmt::Display for SourceTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SourceTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SourceTag::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| Error::invalid("source tag", alloc::format!("unknown tag {s:?}")))
    }
}

/// One labelled model input.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub features: FeatureSequence,
    pub label_mps: f64,
    pub clip_id: String,
    pub source_tag: SourceTag,
}

impl Sample {
    pub fn new(
        features: FeatureSequence,
        label_mps: f64,
        clip_id: impl Into<String>,
        source_tag: SourceTag,
    ) -> Result<Self> {
        check_label(label_mps)?;
        Ok(Self {
            features,
            label_mps,
            clip_id: clip_id.into(),
            source_tag,
        })
    }
}

fn check_label(label: f64) -> Result<()> {
    if !label.is_finite() {
        return Err(Error::NonFinite("label"));
    }
    if label < 0.0 {
        return Err(Error::NegativeLabel(label));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestRecord {
    pub clip_id: String,
    /// Feature file or raw clip file, relative to the manifest's directory
    /// unless absolute.
    pub path: String,
    pub label_mps: f64,
    pub timestamp_s: f64,
    pub source_tag: SourceTag,
}

/// Validated list of dataset records. Clip ids are unique and labels are
/// finite and non-negative.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DatasetManifest {
    records: Vec<ManifestRecord>,
}

impl DatasetManifest {
    pub fn new(records: Vec<ManifestRecord>) -> Result<Self> {
        let mut seen = BTreeSet::new();
        for r in &records {
            check_label(r.label_mps)?;
            if !r.timestamp_s.is_finite() {
                return Err(Error::NonFinite("timestamp"));
            }
            if !seen.insert(r.clip_id.as_str()) {
                return Err(Error::DuplicateId(r.clip_id.clone()));
            }
        }
        Ok(Self { records })
    }

    pub fn records(&self) -> &[ManifestRecord] {
        &self.records
    }

    pub fn into_records(self) -> Vec<ManifestRecord> {
        self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn labels(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.label_mps).collect()
    }

    /// Sub-manifest of the records at `indices`, in the given order.
    pub fn select(&self, indices: &[usize]) -> Self {
        Self {
            records: indices.iter().map(|&i| self.records[i].clone()).collect(),
        }
    }
}

/// 64-bit FNV-1a hash of a clip id, stored in feature file headers.
pub fn clip_hash(clip_id: &str) -> u64 {
    let mut h = fnv::FnvHasher::default();
    h.write(clip_id.as_bytes());
    h.finish()
}
