//! Plain CSV outputs: reports, summaries, logs, splits and wind series.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};

use windvis_core::eval::{BinnedReport, EvalRecord, RmseSummary};
use windvis_core::physics::TurbulenceStats;
use windvis_core::WindSeries;

use crate::error::{Error, Result};

struct Csv {
    path: PathBuf,
    inner: csv::Writer<File>,
}

impl Csv {
    fn create(path: &Path, header: &[&str]) -> Result<Self> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut csv = Csv {
            path: path.to_path_buf(),
            inner: csv::Writer::from_writer(file),
        };
        csv.row(header)?;
        Ok(csv)
    }

    fn row<I, T>(&mut self, fields: I) -> Result<()>
    where
        I: IntoIterator<Item = T>,
        T: AsRef<[u8]>,
    {
        self.inner
            .write_record(fields)
            .map_err(|e| Error::csv(&self.path, e))
    }

    fn finish(mut self) -> Result<()> {
        self.inner.flush().map_err(|e| Error::io(&self.path, e))
    }
}

pub fn write_sigma_csv(path: &Path, stats: &TurbulenceStats) -> Result<()> {
    let mut csv = Csv::create(path, &["bin_center_mps", "sigma_u_mps", "count"])?;
    for i in 0..stats.bin_centers_mps.len() {
        csv.row([
            stats.bin_centers_mps[i].to_string(),
            stats.sigma_u_mps[i].to_string(),
            stats.counts[i].to_string(),
        ])?;
    }
    csv.finish()
}

pub fn write_report_csv(path: &Path, report: &BinnedReport) -> Result<()> {
    let mut csv = Csv::create(
        path,
        &["bin_center_mps", "mean_pred_mps", "std_pred_mps", "count"],
    )?;
    for i in 0..report.len() {
        csv.row([
            report.bin_center_mps[i].to_string(),
            report.mean_prediction_mps[i].to_string(),
            report.std_prediction_mps[i].to_string(),
            report.count[i].to_string(),
        ])?;
    }
    csv.finish()
}

/// One row of the summary table.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub dataset: String,
    pub variant: String,
    pub summary: RmseSummary,
}

pub fn write_summary_csv(path: &Path, rows: &[SummaryRow]) -> Result<()> {
    let mut csv = Csv::create(
        path,
        &[
            "dataset",
            "variant",
            "overall_rmse",
            "measurable_rmse",
            "n",
            "n_measurable",
        ],
    )?;
    for r in rows {
        csv.row([
            r.dataset.clone(),
            r.variant.clone(),
            r.summary.overall_rmse_mps.to_string(),
            r.summary.measurable_rmse_mps.to_string(),
            r.summary.n_overall.to_string(),
            r.summary.n_measurable.to_string(),
        ])?;
    }
    csv.finish()
}

pub fn write_predictions_csv(path: &Path, records: &[EvalRecord]) -> Result<()> {
    let mut csv = Csv::create(path, &["clip_id", "source_tag", "label_mps", "pred_mps"])?;
    for r in records {
        csv.row([
            r.clip_id.clone(),
            r.source_tag.to_string(),
            r.y.to_string(),
            r.y_hat.to_string(),
        ])?;
    }
    csv.finish()
}

/// Training log written row by row as epochs finish.
pub struct TrainLog(Csv);

impl TrainLog {
    pub fn create(path: &Path) -> Result<Self> {
        Ok(TrainLog(Csv::create(
            path,
            &["epoch", "train_mse", "val_rmse", "seconds"],
        )?))
    }

    pub fn epoch(
        &mut self,
        epoch: usize,
        train_mse: f64,
        val_rmse: f64,
        seconds: f64,
    ) -> Result<()> {
        self.0.row([
            epoch.to_string(),
            train_mse.to_string(),
            val_rmse.to_string(),
            format!("{seconds:.3}"),
        ])?;
        self.0.inner.flush().map_err(|e| Error::io(&self.0.path, e))
    }

    pub fn finish(self) -> Result<()> {
        self.0.finish()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Split {
    Train,
    Val,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
        }
    }
}

pub fn write_split_csv(path: &Path, assignment: &[(String, Split)]) -> Result<()> {
    let mut csv = Csv::create(path, &["clip_id", "split"])?;
    for (id, split) in assignment {
        csv.row([id.as_str(), split.as_str()])?;
    }
    csv.finish()
}

pub fn read_split_csv(path: &Path) -> Result<BTreeMap<String, Split>> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| Error::csv(path, e))?;
    let mut out = BTreeMap::new();
    for row in rdr.records() {
        let row = row.map_err(|e| Error::csv(path, e))?;
        let split = match &row[1] {
            "train" => Split::Train,
            "val" => Split::Val,
            other => {
                return Err(Error::Row {
                    path: path.to_path_buf(),
                    line: row.position().map_or(0, |p| p.line()),
                    reason: format!("unknown split {other:?}"),
                })
            }
        };
        out.insert(row[0].to_string(), split);
    }
    Ok(out)
}

/// Writes `series_id,mean_mps,t_s,u_mps`, one row per sample.
pub fn write_series_csv(path: &Path, series: &[WindSeries]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    let io = |e| Error::io(path, e);
    writeln!(w, "series_id,mean_mps,t_s,u_mps").map_err(io)?;
    for (i, s) in series.iter().enumerate() {
        for (k, u) in s.instantaneous_mps.iter().enumerate() {
            let t = k as f64 / s.sample_rate_hz;
            writeln!(w, "{i},{},{t},{u}", s.mean_speed_mps).map_err(io)?;
        }
    }
    w.flush().map_err(io)
}

/// Reads a series CSV; rows of one `series_id` must be contiguous and in
/// time order.
pub fn read_series_csv(path: &Path, sample_rate_hz: f64) -> Result<Vec<WindSeries>> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| Error::csv(path, e))?;
    let header = rdr.headers().map_err(|e| Error::csv(path, e))?;
    if header.iter().ne(["series_id", "mean_mps", "t_s", "u_mps"]) {
        return Err(Error::format(
            path,
            "series header must be `series_id,mean_mps,t_s,u_mps`",
        ));
    }
    let mut groups: Vec<(String, f64, Vec<f64>)> = Vec::new();
    for row in rdr.records() {
        let row = row.map_err(|e| Error::csv(path, e))?;
        let line = row.position().map_or(0, |p| p.line());
        let num = |i: usize| {
            row[i].parse::<f64>().map_err(|_| Error::Row {
                path: path.to_path_buf(),
                line,
                reason: format!("{:?} is not a number", &row[i]),
            })
        };
        let (mean, u) = (num(1)?, num(3)?);
        match groups.last_mut() {
            Some((id, _, values)) if *id == row[0] => values.push(u),
            _ => {
                if groups.iter().any(|(id, _, _)| *id == row[0]) {
                    return Err(Error::Row {
                        path: path.to_path_buf(),
                        line,
                        reason: format!("rows of series {:?} are not contiguous", &row[0]),
                    });
                }
                groups.push((row[0].to_string(), mean, vec![u]));
            }
        }
    }
    groups
        .into_iter()
        .map(|(_, mean, values)| {
            let mut s = WindSeries::from_samples(values, sample_rate_hz)?;
            s.mean_speed_mps = mean;
            Ok(s)
        })
        .collect()
}
