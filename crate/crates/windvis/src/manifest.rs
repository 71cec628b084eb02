//! Manifest CSV: `clip_id,path,label_mps,timestamp_s,source_tag`.

use std::fs::File;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use windvis_core::{DatasetManifest, ManifestRecord, SourceTag};

use crate::error::{Error, Result};

pub const HEADER: [&str; 5] = ["clip_id", "path", "label_mps", "timestamp_s", "source_tag"];

/// Parses a manifest; `origin` only labels errors.
pub fn read_manifest(reader: impl Read, origin: &Path) -> Result<DatasetManifest> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(reader);
    let header = rdr.headers().map_err(|e| Error::csv(origin, e))?.clone();
    if header.iter().ne(HEADER) {
        return Err(Error::format(
            origin,
            format!("manifest header must be `{}`", HEADER.join(",")),
        ));
    }
    let mut records = Vec::new();
    for row in rdr.records() {
        let row = row.map_err(|e| Error::csv(origin, e))?;
        let line = row.position().map_or(0, |p| p.line());
        let bad = |reason: String| Error::Row {
            path: origin.to_path_buf(),
            line,
            reason,
        };
        let number = |i: usize, what: &str| {
            row[i].trim().parse::<f64>().map_err(|_| {
                bad(format!(
                    "malformed row: {what} {:?} is not a number",
                    &row[i]
                ))
            })
        };
        let label_mps = number(2, "label_mps")?;
        let timestamp_s = number(3, "timestamp_s")?;
        let source_tag: SourceTag = row[4]
            .trim()
            .parse()
            .map_err(|e: windvis_core::Error| bad(format!("malformed row: {e}")))?;
        if row[0].is_empty() {
            return Err(bad("malformed row: empty clip_id".into()));
        }
        records.push(ManifestRecord {
            clip_id: row[0].to_string(),
            path: row[1].to_string(),
            label_mps,
            timestamp_s,
            source_tag,
        });
    }
    Ok(DatasetManifest::new(records)?)
}

pub fn load_manifest(path: &Path) -> Result<DatasetManifest> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_manifest(file, path)
}

pub fn write_manifest_to(
    writer: impl Write,
    manifest: &DatasetManifest,
    origin: &Path,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let err = |e| Error::csv(origin, e);
    w.write_record(HEADER).map_err(err)?;
    for r in manifest.records() {
        w.write_record([
            r.clip_id.as_str(),
            r.path.as_str(),
            &r.label_mps.to_string(),
            &r.timestamp_s.to_string(),
            r.source_tag.as_str(),
        ])
        .map_err(err)?;
    }
    w.flush().map_err(|e| Error::io(origin, e))
}

pub fn write_manifest(path: &Path, manifest: &DatasetManifest) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_manifest_to(file, manifest, path)
}

/// Directory that relative record paths are resolved against.
pub fn base_dir(manifest_path: &Path) -> PathBuf {
    match manifest_path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    }
}

pub fn resolve(base: &Path, record: &ManifestRecord) -> PathBuf {
    let p = Path::new(&record.path);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}
