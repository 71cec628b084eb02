//! Frame features and temporal mean removal.
//!
//! The built-in extractor computes a few statistics per square patch of each
//! frame, optionally clamps them with a ReLU, max-pools the patch grid
//! spatially and flattens channel-major. Features produced by any outside
//! tool can be used instead through feature files (`ExtractorKind::ExternalFile`).

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::types::{ClipTensor, FeatureSequence, Sample};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Stat {
    Mean,
    Std,
    Max,
    /// Mean absolute difference to the same patch in the previous frame
    /// (zero for the first frame).
    FrameDiff,
}

impl Stat {
    pub const ALL: [Stat; 4] = [Stat::Mean, Stat::Std, Stat::Max, Stat::FrameDiff];

    pub fn as_str(self) -> &'static str {
        match self {
            Stat::Mean => "mean",
            Stat::Std => "std",
            Stat::Max => "max",
            Stat::FrameDiff => "diff",
        }
    }
}

impl core::str::FromStr for Stat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Stat::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| Error::invalid("statistic", alloc::format!("unknown statistic {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ExtractorKind {
    #[default]
    PooledStats,
    ExternalFile,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExtractorSpec {
    pub kind: ExtractorKind,
    pub patch_px: usize,
    /// Channels in output order; duplicates are rejected.
    pub stats: Vec<Stat>,
    pub relu_clamp: bool,
    pub pool_filter: usize,
    pub pool_stride: usize,
}

impl Default for ExtractorSpec {
    fn default() -> Self {
        Self {
            kind: ExtractorKind::PooledStats,
            patch_px: 4,
            stats: Stat::ALL.to_vec(),
            relu_clamp: true,
            pool_filter: 3,
            pool_stride: 2,
        }
    }
}

/// Shape bookkeeping for one frame size.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FeatureShape {
    pub crop_top: usize,
    pub crop_left: usize,
    pub grid_rows: usize,
    pub grid_cols: usize,
    pub pooled_rows: usize,
    pub pooled_cols: usize,
    pub channels: usize,
}

impl FeatureShape {
    pub fn num_features(&self) -> usize {
        self.channels * self.pooled_rows * self.pooled_cols
    }
}

impl ExtractorSpec {
    pub fn validate(&self) -> Result<()> {
        if self.patch_px == 0 || self.pool_filter == 0 || self.pool_stride == 0 {
            return Err(Error::invalid(
                "extractor",
                "patch size, pool filter and pool stride must be positive",
            ));
        }
        if self.stats.is_empty() {
            return Err(Error::invalid(
                "extractor",
                "at least one statistic is required",
            ));
        }
        let mut sorted = self.stats.clone();
        sorted.sort();
        sorted.dedup();
        if sorted.len() != self.stats.len() {
            return Err(Error::invalid("extractor", "duplicate statistic"));
        }
        Ok(())
    }

    /// Frames are centre-cropped to the largest multiple of `patch_px` in
    /// each direction.
    pub fn shape_for(&self, height: usize, width: usize) -> Result<FeatureShape> {
        self.validate()?;
        let grid_rows = height / self.patch_px;
        let grid_cols = width / self.patch_px;
        if grid_rows < self.pool_filter || grid_cols < self.pool_filter {
            return Err(Error::invalid(
                "extractor",
                alloc::format!(
                    "{height}×{width} frames give a {grid_rows}×{grid_cols} patch grid, \
                     smaller than the {}×{} pool filter",
                    self.pool_filter,
                    self.pool_filter
                ),
            ));
        }
        Ok(FeatureShape {
            crop_top: (height - grid_rows * self.patch_px) / 2,
            crop_left: (width - grid_cols * self.patch_px) / 2,
            grid_rows,
            grid_cols,
            pooled_rows: (grid_rows - self.pool_filter) / self.pool_stride + 1,
            pooled_cols: (grid_cols - self.pool_filter) / self.pool_stride + 1,
            channels: self.stats.len(),
        })
    }
}

/// Per-frame pooled patch statistics of `clip`.
pub fn extract(clip: &ClipTensor, spec: &ExtractorSpec) -> Result<FeatureSequence> {
    if spec.kind == ExtractorKind::ExternalFile {
        return Err(Error::invalid(
            "extractor",
            "external_file features are read from feature files, not extracted",
        ));
    }
    let shape = spec.shape_for(clip.height(), clip.width())?;
    let (gr, gc) = (shape.grid_rows, shape.grid_cols);
    let cells = gr * gc;
    let d = shape.num_features();
    let mut values = Vec::with_capacity(d * clip.num_frames());
    let mut grid = vec![0.0f64; shape.channels * cells];

    for t in 0..clip.num_frames() {
        let frame = clip.frame(t);
        let prev = (t > 0).then(|| clip.frame(t - 1));
        for pr in 0..gr {
            for pc in 0..gc {
                let stats = patch_stats(clip.width(), frame, prev, &shape, spec.patch_px, pr, pc);
                for (ch, stat) in spec.stats.iter().enumerate() {
                    let mut v = stats[*stat as usize];
                    if spec.relu_clamp {
                        v = v.max(0.0);
                    }
                    grid[ch * cells + pr * gc + pc] = v;
                }
            }
        }
        for ch in 0..shape.channels {
            let plane = &grid[ch * cells..(ch + 1) * cells];
            for r in 0..shape.pooled_rows {
                for c in 0..shape.pooled_cols {
                    let (r0, c0) = (r * spec.pool_stride, c * spec.pool_stride);
                    let mut m = f64::NEG_INFINITY;
                    for rr in r0..r0 + spec.pool_filter {
                        for cc in c0..c0 + spec.pool_filter {
                            m = m.max(plane[rr * gc + cc]);
                        }
                    }
                    values.push(m);
                }
            }
        }
    }
    FeatureSequence::new(d, clip.num_frames(), values)
}

/// `[mean, std, max, frame_diff]` of one patch.
fn patch_stats(
    width: usize,
    frame: &[f32],
    prev: Option<&[f32]>,
    shape: &FeatureShape,
    patch: usize,
    pr: usize,
    pc: usize,
) -> [f64; 4] {
    let n = (patch * patch) as f64;
    let (mut sum, mut max, mut diff) = (0.0, f64::NEG_INFINITY, 0.0);
    let rows = shape.crop_top + pr * patch..shape.crop_top + (pr + 1) * patch;
    let cols = shape.crop_left + pc * patch..shape.crop_left + (pc + 1) * patch;
    for y in rows.clone() {
        for x in cols.clone() {
            let i = y * width + x;
            let p = frame[i] as f64;
            sum += p;
            max = max.max(p);
            if let Some(prev) = prev {
                diff += libm::fabs(p - prev[i] as f64);
            }
        }
    }
    let mean = sum / n;
    let mut var = 0.0;
    for y in rows {
        for x in cols.clone() {
            let e = frame[y * width + x] as f64 - mean;
            var += e * e;
        }
    }
    [mean, libm::sqrt(var / n), max, diff / n]
}

/// Removes each feature's mean over the frames of the clip.
///
/// Computed on differences to the first frame, so adding a constant to a
/// feature (where that addition is exact) leaves the output bit-identical.
pub fn subtract_temporal_mean(seq: &FeatureSequence) -> Result<FeatureSequence> {
    if seq.mean_subtracted() {
        return Err(Error::AlreadyMeanSubtracted);
    }
    let d = seq.num_features();
    let t_len = seq.num_frames();
    let first = seq.frame(0);
    let mut mean_offset = vec![0.0f64; d];
    for frame in seq.frames() {
        for ((m, x), x0) in mean_offset.iter_mut().zip(frame).zip(first) {
            *m += x - x0;
        }
    }
    for m in &mut mean_offset {
        *m /= t_len as f64;
    }
    let mut values = Vec::with_capacity(d * t_len);
    for frame in seq.frames() {
        for ((x, x0), m) in frame.iter().zip(first).zip(&mean_offset) {
            values.push((x - x0) - m);
        }
    }
    Ok(FeatureSequence::new(d, t_len, values)?.with_mean_subtracted())
}

/// Model input variant: temporal-mean-subtracted ("no mean") or raw features.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Variant {
    #[default]
    Nm,
    Raw,
}

impl Variant {
    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Nm => "nm",
            Variant::Raw => "raw",
        }
    }

    pub fn apply(self, seq: FeatureSequence) -> Result<FeatureSequence> {
        match self {
            Variant::Nm => subtract_temporal_mean(&seq),
            Variant::Raw => Ok(seq),
        }
    }
}

impl core::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "nm" => Ok(Variant::Nm),
            "raw" => Ok(Variant::Raw),
            _ => Err(Error::invalid(
                "variant",
                alloc::format!("expected nm or raw, got {s:?}"),
            )),
        }
    }
}

/// Checks every sample has the same feature dimension and returns it.
pub fn check_feature_dims(samples: &[Sample]) -> Result<usize> {
    let Some(first) = samples.first() else {
        return Err(Error::Empty("sample list"));
    };
    let d = first.features.num_features();
    for s in samples {
        if s.features.num_features() != d {
            return Err(Error::InconsistentFeatureDimension {
                expected: d,
                found: s.features.num_features(),
            });
        }
    }
    Ok(d)
}
