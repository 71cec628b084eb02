//! Synthetic dataset generation on disk and loading of model inputs.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use windvis_core::features::{check_feature_dims, extract};
use windvis_core::flagsim::{plan_dataset, render_slot, ClipSlot, DatasetPlan, PlannedSeries};
use windvis_core::types::clip_hash;
use windvis_core::{
    DatasetManifest, ExtractorKind, ExtractorSpec, ManifestRecord, Rng, Sample, Variant, WindSeries,
};

use crate::error::{Error, Result};
use crate::format::{self, DataFileKind};
use crate::manifest::{resolve, write_manifest};

/// What `generate_dataset` stores per clip.
#[derive(Debug, Clone, PartialEq)]
pub enum ClipOutput {
    Features(ExtractorSpec),
    RawClips,
}

#[derive(Debug, Clone)]
pub struct GenerateOptions {
    pub plan: DatasetPlan,
    pub seed: u64,
    pub output: ClipOutput,
}

#[derive(Debug, Clone)]
pub struct GeneratedDataset {
    pub manifest: DatasetManifest,
    pub series: Vec<WindSeries>,
}

fn slots(planned: &[PlannedSeries]) -> Vec<(&PlannedSeries, &ClipSlot)> {
    planned
        .iter()
        .flat_map(|p| p.slots.iter().map(move |s| (p, s)))
        .collect()
}

/// Writes one file per clip under `out_dir/features` (or `out_dir/clips`),
/// then `manifest.csv` and `series.csv`. Clips are rendered in parallel;
/// the output does not depend on the thread count.
pub fn generate_dataset(opts: &GenerateOptions, out_dir: &Path) -> Result<GeneratedDataset> {
    if let ClipOutput::Features(spec) = &opts.output {
        spec.validate()?;
        spec.shape_for(
            opts.plan.setup.frame_height_px,
            opts.plan.setup.frame_width_px,
        )?;
    }
    let rng = Rng::new(opts.seed);
    let planned = plan_dataset(&opts.plan, &rng)?;
    let (sub, ext) = match opts.output {
        ClipOutput::Features(_) => ("features", "wanf"),
        ClipOutput::RawClips => ("clips", "wanc"),
    };
    let dir = out_dir.join(sub);
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;

    let records = slots(&planned)
        .par_iter()
        .map(|(p, slot)| {
            let clip = render_slot(p, slot, &opts.plan, &rng)?;
            let rel = format!("{sub}/{}.{ext}", slot.clip_id);
            let path = out_dir.join(&rel);
            match &opts.output {
                ClipOutput::Features(spec) => {
                    let seq = extract(&clip, spec)?;
                    format::write_feature_file(&path, &seq, &slot.clip_id)?;
                }
                ClipOutput::RawClips => format::write_clip_file(&path, &clip, &slot.clip_id)?,
            }
            Ok(ManifestRecord {
                clip_id: slot.clip_id.clone(),
                path: rel,
                label_mps: slot.label_mps,
                timestamp_s: slot.timestamp_s,
                source_tag: opts.plan.source_tag,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let manifest = DatasetManifest::new(records)?;
    write_manifest(&out_dir.join("manifest.csv"), &manifest)?;
    let series: Vec<WindSeries> = planned.into_iter().map(|p| p.series).collect();
    crate::report::write_series_csv(&out_dir.join("series.csv"), &series)?;
    Ok(GeneratedDataset { manifest, series })
}

/// In-memory counterpart of `generate_dataset` followed by
/// `prepare_inputs`: renders, extracts and applies `variant`.
pub fn synthesize_samples(
    plan: &DatasetPlan,
    seed: u64,
    spec: &ExtractorSpec,
    variant: Variant,
) -> Result<(Vec<Sample>, Vec<WindSeries>)> {
    let rng = Rng::new(seed);
    let planned = plan_dataset(plan, &rng)?;
    let samples = slots(&planned)
        .par_iter()
        .map(|(p, slot)| {
            let clip = render_slot(p, slot, plan, &rng)?;
            let seq = variant.apply(extract(&clip, spec)?)?;
            Ok(Sample::new(
                seq,
                slot.label_mps,
                slot.clip_id.clone(),
                plan.source_tag,
            )?)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((samples, planned.into_iter().map(|p| p.series).collect()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrepareOptions {
    pub extractor: ExtractorSpec,
    pub variant: Variant,
    /// Frame rate assumed for raw clip files.
    pub frame_rate_hz: f64,
}

/// Loads or extracts the features of every record, applies the variant and
/// attaches labels. Feature files whose header hash is non-zero must match
/// the record's clip id.
pub fn prepare_inputs(
    manifest: &DatasetManifest,
    base: &Path,
    opts: &PrepareOptions,
) -> Result<Vec<Sample>> {
    let samples = manifest
        .records()
        .par_iter()
        .map(|r| {
            let seq = load_sequence(base, r, opts)?;
            Ok(Sample::new(
                opts.variant.apply(seq)?,
                r.label_mps,
                r.clip_id.clone(),
                r.source_tag,
            )?)
        })
        .collect::<Result<Vec<_>>>()?;
    if !samples.is_empty() {
        check_feature_dims(&samples)?;
    }
    Ok(samples)
}

fn load_sequence(
    base: &Path,
    record: &ManifestRecord,
    opts: &PrepareOptions,
) -> Result<windvis_core::FeatureSequence> {
    let path = resolve(base, record);
    let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
    match format::sniff(&bytes) {
        Some(DataFileKind::Features) => {
            let file = format::decode_features(&bytes).map_err(|e| Error::format(&path, e))?;
            if file.clip_hash != 0 && file.clip_hash != clip_hash(&record.clip_id) {
                return Err(Error::format(
                    &path,
                    format!("clip id hash does not match {:?}", record.clip_id),
                ));
            }
            Ok(file.sequence)
        }
        Some(DataFileKind::Clip) => {
            if opts.extractor.kind == ExtractorKind::ExternalFile {
                return Err(Error::format(
                    &path,
                    "raw clip found but the extractor is external_file",
                ));
            }
            let (clip, _) = format::decode_clip(&bytes, opts.frame_rate_hz, record.timestamp_s)
                .map_err(|e| Error::format(&path, e))?;
            Ok(extract(&clip, &opts.extractor)?)
        }
        None => Err(Error::format(
            &path,
            "bad magic (not a feature or clip file)",
        )),
    }
}

fn file_stem(clip_id: &str) -> String {
    clip_id
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || "-_.".contains(c) {
                c
            } else {
                '_'
            }
        })
        .collect()
}

/// Extracts features from the raw clips of `manifest` into
/// `out_dir/features` and writes `out_dir/manifest.csv` pointing at them.
pub fn extract_manifest(
    manifest: &DatasetManifest,
    base: &Path,
    spec: &ExtractorSpec,
    frame_rate_hz: f64,
    out_dir: &Path,
) -> Result<DatasetManifest> {
    let dir = out_dir.join("features");
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let mut stems = HashSet::new();
    for r in manifest.records() {
        if !stems.insert(file_stem(&r.clip_id)) {
            return Err(Error::Usage(format!(
                "clip ids collide after sanitising file names: {:?}",
                r.clip_id
            )));
        }
    }
    let opts = PrepareOptions {
        extractor: spec.clone(),
        variant: Variant::Raw,
        frame_rate_hz,
    };
    let records = manifest
        .records()
        .par_iter()
        .map(|r| {
            let seq = load_sequence(base, r, &opts)?;
            let rel = format!("features/{}.wanf", file_stem(&r.clip_id));
            format::write_feature_file(&out_dir.join(&rel), &seq, &r.clip_id)?;
            Ok(ManifestRecord {
                path: rel,
                ..r.clone()
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let out = DatasetManifest::new(records)?;
    write_manifest(&out_dir.join("manifest.csv"), &out)?;
    Ok(out)
}

/// Rewrites record paths so they resolve from `new_base`: relative paths are
/// kept when the base does not change and made absolute otherwise.
pub fn rebase(
    manifest: &DatasetManifest,
    old_base: &Path,
    new_base: &Path,
) -> Result<DatasetManifest> {
    let same = fs::canonicalize(old_base).ok() == fs::canonicalize(new_base).ok();
    if same {
        return Ok(manifest.clone());
    }
    let records = manifest
        .records()
        .iter()
        .map(|r| {
            let p = resolve(old_base, r);
            let abs: PathBuf = fs::canonicalize(&p).map_err(|e| Error::io(&p, e))?;
            Ok(ManifestRecord {
                path: abs.to_string_lossy().into_owned(),
                ..r.clone()
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(DatasetManifest::new(records)?)
}
