//! The `windvis` command line.
//!
//! Every tunable resolves as: command-line flag, then `--config` file, then
//! the built-in default listed in [`KEYS`].

use std::fmt::Display;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use rand::Rng as _;
use windvis_core::eval::{binned_report, compare_to_turbulence, rmse, EvalRecord};
use windvis_core::flagsim::{DatasetPlan, LabelWindow, TurbulenceSpec};
use windvis_core::physics::{measurable_range, sigma_u_band, Bounds, TurbulenceWindows};
use windvis_core::train::{balance_dataset, evaluate, fit_with, split_indices};
use windvis_core::{
    ExtractorKind, ExtractorSpec, FlagRenderSpec, LstmConfig, LstmNetwork, PhysicalSetup, Rng,
    Sample, SourceTag, Stat, TrainConfig, Variant,
};

use crate::config::{normalize_key, Config};
use crate::dataset::{
    extract_manifest, generate_dataset, prepare_inputs, rebase, ClipOutput, GenerateOptions,
    PrepareOptions,
};
use crate::error::{Error, Result};
use crate::format::{quantize, read_checkpoint, write_checkpoint, Checkpoint};
use crate::manifest::{base_dir, load_manifest, write_manifest};
use crate::report::{
    read_series_csv, read_split_csv, write_predictions_csv, write_report_csv, write_sigma_csv,
    write_split_csv, write_summary_csv, Split, SummaryRow, TrainLog,
};

/// Config keys and their defaults, in `config dump` order.
pub const KEYS: &[(&str, &str)] = &[
    ("speeds", "1:10:1"),
    ("clips_per_speed", "10"),
    ("intensity", "0.15"),
    ("correlation_time", "1"),
    ("averaging_window", "60"),
    ("label_window", "centered"),
    ("source_tag", "synthetic"),
    ("raw_clips", "false"),
    ("flag_length", "1.5"),
    ("fps", "15"),
    ("duration", "2"),
    ("height", "32"),
    ("width", "32"),
    ("amplitude", "6"),
    ("wave_mode", "1"),
    ("background", "0.2"),
    ("background_drift", "0"),
    ("band_half_width", "2"),
    ("noise", "0"),
    ("extractor", "pooled_stats"),
    ("patch", "4"),
    ("stats", "mean,std,max,diff"),
    ("relu", "true"),
    ("pool_filter", "3"),
    ("pool_stride", "2"),
    ("variant", "nm"),
    ("hidden", "64"),
    ("layers", "2"),
    ("no_bias", "false"),
    ("lr", "0.01"),
    ("momentum", "0.9"),
    ("batch", "32"),
    ("epochs", "20"),
    ("patience", "3"),
    ("balance_bin", "0.25"),
    ("balance_cap", "none"),
    ("train_fraction", "0.76"),
    ("bounds", "paper"),
    ("report_bin", "1"),
    ("sigma_bin", "0.5"),
    ("sigma_window", "2"),
    ("sigma_mean_window", "60"),
];

const SPEED_STREAM: u64 = 0x5350_4545_0000_0000;

#[derive(Debug, Parser)]
#[command(
    name = "windvis",
    version,
    about = "Wind speed from flapping-flag video features"
)]
pub struct Cli {
    /// `key = value` file supplying defaults for any option.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Worker threads for clip generation and feature loading.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset: clips or features, manifest.csv, series.csv.
    Gen(GenArgs),
    /// Extract features from raw clips into feature files.
    Extract(ExtractCmd),
    /// Write a speed-balanced copy of a manifest.
    Balance(BalanceArgs),
    /// Train a regressor and write model.wanw, train_log.csv and split.csv.
    Train(TrainArgs),
    /// Write summary.csv, report.csv and predictions.csv for a checkpoint.
    Eval(EvalArgs),
    /// Print or write predictions for every record of a manifest.
    Predict(PredictArgs),
    /// Print the measurable wind-speed range of a camera and flag setup.
    Limits(SetupArgs),
    /// Turbulence band sigma_u per mean-speed bin from a series CSV.
    Sigma(SigmaArgs),
    /// Configuration utilities.
    #[command(subcommand)]
    Config(ConfigCmd),
}

#[derive(Debug, Subcommand)]
pub enum ConfigCmd {
    /// Echo the config file (or the defaults when none is given).
    Dump,
}

#[derive(Debug, Clone, Default, Args)]
pub struct SetupArgs {
    #[arg(long)]
    pub flag_length: Option<f64>,
    #[arg(long)]
    pub fps: Option<f64>,
    #[arg(long)]
    pub duration: Option<f64>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct FrameArgs {
    #[arg(long)]
    pub height: Option<usize>,
    #[arg(long)]
    pub width: Option<usize>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct ExtractorArgs {
    /// pooled_stats or external_file.
    #[arg(long)]
    pub extractor: Option<String>,
    #[arg(long)]
    pub patch: Option<usize>,
    /// Comma-separated subset of mean,std,max,diff.
    #[arg(long)]
    pub stats: Option<String>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub relu: Option<bool>,
    #[arg(long)]
    pub pool_filter: Option<usize>,
    #[arg(long)]
    pub pool_stride: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct GenArgs {
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
    /// `a:b:step` (inclusive), `uniform:a:b:n`, or a comma list.
    #[arg(long)]
    pub speeds: Option<String>,
    #[arg(long)]
    pub clips_per_speed: Option<usize>,
    #[arg(long)]
    pub intensity: Option<f64>,
    #[arg(long)]
    pub correlation_time: Option<f64>,
    #[arg(long)]
    pub averaging_window: Option<f64>,
    /// Series length in seconds (default: enough for all clips and one window).
    #[arg(long)]
    pub series_duration: Option<f64>,
    /// centered, leading or trailing.
    #[arg(long)]
    pub label_window: Option<String>,
    #[arg(long)]
    pub source_tag: Option<String>,
    /// Store raw clips instead of features.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub raw_clips: Option<bool>,
    #[command(flatten)]
    pub setup: SetupArgs,
    #[command(flatten)]
    pub frame: FrameArgs,
    #[arg(long)]
    pub amplitude: Option<f64>,
    #[arg(long)]
    pub wave_mode: Option<u32>,
    #[arg(long)]
    pub background: Option<f64>,
    #[arg(long)]
    pub background_drift: Option<f64>,
    #[arg(long)]
    pub band_half_width: Option<f64>,
    #[arg(long)]
    pub noise: Option<f64>,
    #[command(flatten)]
    pub extractor: ExtractorArgs,
}

#[derive(Debug, Clone, Args)]
pub struct ExtractCmd {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub fps: Option<f64>,
    #[command(flatten)]
    pub extractor: ExtractorArgs,
}

#[derive(Debug, Clone, Args)]
pub struct BalanceArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Output manifest path.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub balance_bin: Option<f64>,
    /// Per-bin cap, or `none` to keep every record.
    #[arg(long)]
    pub balance_cap: Option<String>,
}

#[derive(Debug, Clone, Args)]
pub struct ModelArgs {
    /// nm or raw.
    #[arg(long)]
    pub variant: Option<String>,
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub layers: Option<usize>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub no_bias: Option<bool>,
    /// Full-size network (1000 hidden units) and minibatches of 256.
    #[arg(long = "paper-size")]
    pub full_size: bool,
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub momentum: Option<f64>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub balance_bin: Option<f64>,
    #[arg(long)]
    pub balance_cap: Option<String>,
    #[arg(long)]
    pub train_fraction: Option<f64>,
    #[arg(long)]
    pub fps: Option<f64>,
    #[command(flatten)]
    pub extractor: ExtractorArgs,
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// `paper` (the rounded field range, 0.75 to 11) or `exact` (computed from the setup).
    #[arg(long)]
    pub bounds: Option<String>,
    #[arg(long)]
    pub report_bin: Option<f64>,
    /// Restrict to one side of a split.csv written by `train`.
    #[arg(long, requires = "subset")]
    pub split: Option<PathBuf>,
    /// train or val.
    #[arg(long, requires = "split")]
    pub subset: Option<String>,
    /// series.csv to compare prediction spread with sigma_u.
    #[arg(long)]
    pub series: Option<PathBuf>,
    #[command(flatten)]
    pub setup: SetupArgs,
    #[command(flatten)]
    pub extractor: ExtractorArgs,
}

#[derive(Debug, Clone, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// CSV output path; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub fps: Option<f64>,
    #[command(flatten)]
    pub extractor: ExtractorArgs,
}

#[derive(Debug, Clone, Args)]
pub struct SigmaArgs {
    #[arg(long)]
    pub series: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub fps: Option<f64>,
    #[arg(long)]
    pub sigma_bin: Option<f64>,
    #[arg(long)]
    pub sigma_window: Option<f64>,
    #[arg(long)]
    pub sigma_mean_window: Option<f64>,
}

/// Resolves option values against the config file and [`KEYS`].
pub struct Resolver {
    config: Option<Config>,
}

impl Resolver {
    pub fn new(config: Option<Config>) -> Self {
        Self { config }
    }

    fn raw(&self, key: &str) -> &str {
        let key = normalize_key(key);
        self.config
            .as_ref()
            .and_then(|c| c.get(&key))
            .or_else(|| KEYS.iter().find(|(k, _)| *k == key).map(|(_, v)| *v))
            .unwrap_or_else(|| panic!("no default for {key}"))
    }

    pub fn get<T>(&self, cli: Option<T>, key: &str) -> Result<T>
    where
        T: FromStr,
        T::Err: Display,
    {
        match cli {
            Some(v) => Ok(v),
            None => {
                let raw = self.raw(key);
                raw.parse().map_err(|e| {
                    Error::Usage(format!("config key {key}: cannot parse {raw:?}: {e}"))
                })
            }
        }
    }

    fn parsed<T>(&self, cli: Option<&str>, key: &str) -> Result<T>
    where
        T: FromStr,
        T::Err: Display,
    {
        let raw = cli.unwrap_or_else(|| self.raw(key));
        raw.parse()
            .map_err(|e| Error::Usage(format!("invalid {key} {raw:?}: {e}")))
    }

    fn cap(&self, cli: Option<&str>) -> Result<Option<usize>> {
        let raw = cli.unwrap_or_else(|| self.raw("balance_cap"));
        if raw == "none" {
            return Ok(None);
        }
        raw.parse()
            .map(Some)
            .map_err(|e| Error::Usage(format!("invalid balance_cap {raw:?}: {e}")))
    }

    pub fn setup(&self, a: &SetupArgs, f: Option<&FrameArgs>) -> Result<PhysicalSetup> {
        let f = f.cloned().unwrap_or_default();
        Ok(PhysicalSetup {
            flag_length_m: self.get(a.flag_length, "flag_length")?,
            frame_rate_hz: self.get(a.fps, "fps")?,
            clip_duration_s: self.get(a.duration, "duration")?,
            frame_height_px: self.get(f.height, "height")?,
            frame_width_px: self.get(f.width, "width")?,
        })
    }

    pub fn extractor(&self, a: &ExtractorArgs) -> Result<ExtractorSpec> {
        let kind = match self
            .parsed::<String>(a.extractor.as_deref(), "extractor")?
            .as_str()
        {
            "pooled_stats" => ExtractorKind::PooledStats,
            "external_file" => ExtractorKind::ExternalFile,
            other => {
                return Err(Error::Usage(format!(
                    "unknown extractor {other:?} (expected pooled_stats or external_file)"
                )))
            }
        };
        let stats = self
            .parsed::<String>(a.stats.as_deref(), "stats")?
            .split(',')
            .map(|s| s.trim().parse::<Stat>())
            .collect::<std::result::Result<Vec<_>, _>>()?;
        let spec = ExtractorSpec {
            kind,
            patch_px: self.get(a.patch, "patch")?,
            stats,
            relu_clamp: self.get(a.relu, "relu")?,
            pool_filter: self.get(a.pool_filter, "pool_filter")?,
            pool_stride: self.get(a.pool_stride, "pool_stride")?,
        };
        spec.validate()?;
        Ok(spec)
    }
}

/// Parses a speed list. `uniform:a:b:n` draws `n` speeds from `rng`.
pub fn parse_speeds(text: &str, rng: &mut Rng) -> Result<Vec<f64>> {
    let bad = |why: &str| Error::Usage(format!("invalid speeds {text:?}: {why}"));
    let num = |s: &str| -> Result<f64> {
        s.trim()
            .parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .ok_or_else(|| bad("not a number"))
    };
    let parts: Vec<&str> = text.split(':').collect();
    let speeds = match parts.as_slice() {
        ["uniform", a, b, n] => {
            let (a, b) = (num(a)?, num(b)?);
            let n: usize = n
                .trim()
                .parse()
                .map_err(|_| bad("count must be an integer"))?;
            if !(a < b) {
                return Err(bad("range must be increasing"));
            }
            (0..n).map(|_| rng.random_range(a..b)).collect()
        }
        [a, b, step] => {
            let (a, b, step) = (num(a)?, num(b)?, num(step)?);
            if !(step > 0.0) || b < a {
                return Err(bad("need a ≤ b and a positive step"));
            }
            let n = ((b - a) / step + 1e-9).floor() as usize + 1;
            (0..n).map(|k| a + k as f64 * step).collect()
        }
        [list] => list.split(',').map(num).collect::<Result<Vec<_>>>()?,
        _ => return Err(bad("expected a:b:step, uniform:a:b:n or a comma list")),
    };
    if speeds.is_empty() {
        return Err(bad("no speeds"));
    }
    if speeds.iter().any(|&s| s < 0.0) {
        return Err(bad("speeds must be non-negative"));
    }
    Ok(speeds)
}

/// Shortest rendering of `x` with at most six decimals.
pub fn trim_decimal(x: f64) -> String {
    let s = format!("{x:.6}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" {
        "0".into()
    } else {
        s.into()
    }
}

fn require_seed(seed: Option<u64>, what: &str) -> Result<u64> {
    seed.ok_or_else(|| Error::Usage(format!("{what} requires --seed")))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Parses the arguments and runs the command, writing human-readable
/// output to `out`.
pub fn run(cli: Cli, out: &mut dyn Write) -> Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Error::Usage("--threads must be at least 1".into()));
        }
        // Ignored if a pool already exists (e.g. when called twice in-process).
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global();
    }
    let keys: Vec<&str> = KEYS.iter().map(|(k, _)| *k).collect();
    let config = match &cli.config {
        Some(p) => Some(Config::load(p, Some(&keys))?),
        None => None,
    };
    let r = Resolver::new(config.clone());
    let say = |out: &mut dyn Write, text: String| {
        writeln!(out, "{text}").map_err(|e| Error::io("<stdout>", e))
    };

    match cli.command {
        Command::Gen(a) => cmd_gen(&r, &a)
            .and_then(|n| say(out, format!("wrote {n} clips to {}", a.out.display()))),
        Command::Extract(a) => {
            let manifest = load_manifest(&a.manifest)?;
            let spec = r.extractor(&a.extractor)?;
            let fps = r.get(a.fps, "fps")?;
            create_dir(&a.out)?;
            let m = extract_manifest(&manifest, &base_dir(&a.manifest), &spec, fps, &a.out)?;
            say(out, format!("extracted {} clips", m.len()))
        }
        Command::Balance(a) => {
            let manifest = load_manifest(&a.manifest)?;
            let cfg = TrainConfig {
                seed: a.seed.unwrap_or(0),
                ..TrainConfig::default()
            };
            let bin = r.get(a.balance_bin, "balance_bin")?;
            let cap = r.cap(a.balance_cap.as_deref())?;
            let balanced = balance_dataset(
                &manifest,
                bin,
                cap.unwrap_or(usize::MAX),
                &mut cfg.balance_rng(),
            )?;
            let new_base = base_dir(&a.out);
            create_dir(&new_base)?;
            let balanced = rebase(&balanced, &base_dir(&a.manifest), &new_base)?;
            write_manifest(&a.out, &balanced)?;
            say(
                out,
                format!("kept {} of {} records", balanced.len(), manifest.len()),
            )
        }
        Command::Train(a) => {
            let outcome = cmd_train(&r, &a)?;
            say(
                out,
                format!(
                    "best epoch {} of {}, val rmse {}",
                    outcome.0,
                    outcome.1,
                    trim_decimal(outcome.2)
                ),
            )
        }
        Command::Eval(a) => {
            let rows = cmd_eval(&r, &a)?;
            for row in rows {
                say(
                    out,
                    format!(
                        "{} {}: rmse {} (measurable {}), n {} ({})",
                        row.dataset,
                        row.variant,
                        trim_decimal(row.summary.overall_rmse_mps),
                        trim_decimal(row.summary.measurable_rmse_mps),
                        row.summary.n_overall,
                        row.summary.n_measurable
                    ),
                )?;
            }
            Ok(())
        }
        Command::Predict(a) => {
            let ckpt = read_checkpoint(&a.checkpoint)?;
            let samples = load_samples(&r, &a.manifest, &a.extractor, a.fps, ckpt.variant, None)?;
            let records = evaluate(&ckpt.network, &samples)?;
            match &a.out {
                Some(p) => write_predictions_csv(p, &records),
                None => {
                    say(out, "clip_id,source_tag,label_mps,pred_mps".into())?;
                    for rec in records {
                        say(
                            out,
                            format!("{},{},{},{}", rec.clip_id, rec.source_tag, rec.y, rec.y_hat),
                        )?;
                    }
                    Ok(())
                }
            }
        }
        Command::Limits(a) => {
            let setup = PhysicalSetup {
                flag_length_m: r.get(a.flag_length, "flag_length")?,
                frame_rate_hz: r.get(a.fps, "fps")?,
                clip_duration_s: r.get(a.duration, "duration")?,
                ..PhysicalSetup::default()
            };
            let range = measurable_range(&setup)?;
            say(
                out,
                format!(
                    "{} .. {} (nyquist {} Hz)",
                    trim_decimal(range.u_low_mps),
                    trim_decimal(range.u_high_mps),
                    trim_decimal(range.f_nyquist_hz)
                ),
            )
        }
        Command::Sigma(a) => {
            let fps = r.get(a.fps, "fps")?;
            let series = read_series_csv(&a.series, fps)?;
            let windows = TurbulenceWindows {
                instantaneous_s: r.get(a.sigma_window, "sigma_window")?,
                mean_s: r.get(a.sigma_mean_window, "sigma_mean_window")?,
            };
            let stats = sigma_u_band(&series, r.get(a.sigma_bin, "sigma_bin")?, windows)?;
            write_sigma_csv(&a.out, &stats)?;
            say(out, format!("{} bins", stats.bin_centers_mps.len()))
        }
        Command::Config(ConfigCmd::Dump) => {
            let text = match &config {
                Some(c) => c.dump(),
                None => Config::from_entries(KEYS.iter().copied()).dump(),
            };
            out.write_all(text.as_bytes())
                .map_err(|e| Error::io("<stdout>", e))
        }
    }
}

fn cmd_gen(r: &Resolver, a: &GenArgs) -> Result<usize> {
    let seed = require_seed(a.seed, "gen")?;
    let turbulence = TurbulenceSpec {
        intensity: r.get(a.intensity, "intensity")?,
        correlation_time_s: r.get(a.correlation_time, "correlation_time")?,
        averaging_window_s: r.get(a.averaging_window, "averaging_window")?,
        exact_mean: false,
    };
    turbulence.validate()?;
    let mut speed_rng = Rng::new(seed).derive(SPEED_STREAM);
    let speeds = parse_speeds(
        &r.parsed::<String>(a.speeds.as_deref(), "speeds")?,
        &mut speed_rng,
    )?;
    let setup = r.setup(&a.setup, Some(&a.frame))?;
    let render = FlagRenderSpec {
        amplitude_px: r.get(a.amplitude, "amplitude")?,
        wave_mode: r.get(a.wave_mode, "wave_mode")?,
        background_level: r.get(a.background, "background")?,
        background_drift_per_s: r.get(a.background_drift, "background_drift")?,
        band_half_width_px: r.get(a.band_half_width, "band_half_width")?,
        noise_std: r.get(a.noise, "noise")?,
    };
    let plan = DatasetPlan {
        turbulence,
        setup,
        render,
        series_duration_s: a.series_duration,
        label_window: r.parsed::<LabelWindow>(a.label_window.as_deref(), "label_window")?,
        source_tag: r.parsed::<SourceTag>(a.source_tag.as_deref(), "source_tag")?,
        ..DatasetPlan::new(speeds, r.get(a.clips_per_speed, "clips_per_speed")?)
    };
    let output = if r.get(a.raw_clips, "raw_clips")? {
        ClipOutput::RawClips
    } else {
        let spec = r.extractor(&a.extractor)?;
        if spec.kind == ExtractorKind::ExternalFile {
            return Err(Error::Usage(
                "gen needs a built-in extractor or --raw-clips".into(),
            ));
        }
        ClipOutput::Features(spec)
    };
    create_dir(&a.out)?;
    let generated = generate_dataset(&GenerateOptions { plan, seed, output }, &a.out)?;
    Ok(generated.manifest.len())
}

fn load_samples(
    r: &Resolver,
    manifest_path: &Path,
    extractor: &ExtractorArgs,
    fps: Option<f64>,
    variant: Variant,
    keep: Option<&dyn Fn(&str) -> bool>,
) -> Result<Vec<Sample>> {
    let manifest = load_manifest(manifest_path)?;
    let manifest = match keep {
        Some(keep) => {
            let idx: Vec<usize> = (0..manifest.len())
                .filter(|&i| keep(&manifest.records()[i].clip_id))
                .collect();
            manifest.select(&idx)
        }
        None => manifest,
    };
    if manifest.is_empty() {
        return Err(Error::Core(windvis_core::Error::Empty("manifest")));
    }
    let opts = PrepareOptions {
        extractor: r.extractor(extractor)?,
        variant,
        frame_rate_hz: r.get(fps, "fps")?,
    };
    prepare_inputs(&manifest, &base_dir(manifest_path), &opts)
}

/// Returns (best epoch, epochs run, best validation RMSE).
fn cmd_train(r: &Resolver, a: &TrainArgs) -> Result<(usize, usize, f64)> {
    let seed = require_seed(a.seed, "train")?;
    let manifest = load_manifest(&a.manifest)?;
    let base = TrainConfig {
        seed,
        ..if a.model.full_size {
            TrainConfig::full_size()
        } else {
            TrainConfig::default()
        }
    };
    let cfg = TrainConfig {
        learning_rate: r.get(a.lr, "lr")?,
        momentum: r.get(a.momentum, "momentum")?,
        batch_size: if a.model.full_size && a.batch.is_none() {
            base.batch_size
        } else {
            r.get(a.batch, "batch")?
        },
        max_epochs: r.get(a.epochs, "epochs")?,
        early_stop_patience: r.get(a.patience, "patience")?,
        balance_bin_mps: r.get(a.balance_bin, "balance_bin")?,
        balance_cap: r.cap(a.balance_cap.as_deref())?,
        train_fraction: r.get(a.train_fraction, "train_fraction")?,
        seed,
    };
    cfg.validate()?;
    let variant: Variant = r.parsed(a.model.variant.as_deref(), "variant")?;
    let hidden = if a.model.full_size && a.model.hidden.is_none() {
        LstmConfig::full_size(1).hidden_size
    } else {
        r.get(a.model.hidden, "hidden")?
    };

    let balanced = balance_dataset(
        &manifest,
        cfg.balance_bin_mps,
        cfg.balance_cap.unwrap_or(usize::MAX),
        &mut cfg.balance_rng(),
    )?;
    if balanced.len() < 2 {
        return Err(Error::Usage(format!(
            "need at least 2 records after balancing, have {}",
            balanced.len()
        )));
    }
    let (train_idx, val_idx) =
        split_indices(balanced.len(), cfg.train_fraction, &mut cfg.split_rng())?;
    let opts = PrepareOptions {
        extractor: r.extractor(&a.extractor)?,
        variant,
        frame_rate_hz: r.get(a.fps, "fps")?,
    };
    let base_path = base_dir(&a.manifest);
    let train = prepare_inputs(&balanced.select(&train_idx), &base_path, &opts)?;
    let val = prepare_inputs(&balanced.select(&val_idx), &base_path, &opts)?;

    let net_cfg = LstmConfig {
        input_size: train[0].features.num_features(),
        hidden_size: hidden,
        num_layers: r.get(a.model.layers, "layers")?,
        use_bias: !r.get(a.model.no_bias, "no_bias")?,
    };
    let net = LstmNetwork::new(net_cfg, &mut cfg.init_rng())?;

    create_dir(&a.out)?;
    let mut log = TrainLog::create(&a.out.join("train_log.csv"))?;
    let mut log_err = None;
    let mut clock = Instant::now();
    let outcome = fit_with(&net, &train, &val, &cfg, |s| {
        let secs = clock.elapsed().as_secs_f64();
        clock = Instant::now();
        if log_err.is_none() {
            log_err = log.epoch(s.epoch, s.train_mse, s.val_rmse, secs).err();
        }
    })?;
    if let Some(e) = log_err {
        return Err(e);
    }
    log.finish()?;

    write_checkpoint(
        &a.out.join("model.wanw"),
        &Checkpoint {
            network: quantize(&outcome.network),
            variant,
        },
    )?;
    let mut assignment: Vec<(String, Split)> = train_idx
        .iter()
        .map(|&i| (balanced.records()[i].clip_id.clone(), Split::Train))
        .chain(
            val_idx
                .iter()
                .map(|&i| (balanced.records()[i].clip_id.clone(), Split::Val)),
        )
        .collect();
    assignment.sort();
    write_split_csv(&a.out.join("split.csv"), &assignment)?;
    Ok((
        outcome.best_epoch,
        outcome.history.len(),
        outcome.best_val_rmse(),
    ))
}

fn cmd_eval(r: &Resolver, a: &EvalArgs) -> Result<Vec<SummaryRow>> {
    let ckpt = read_checkpoint(&a.checkpoint)?;
    let bounds = match r.parsed::<String>(a.bounds.as_deref(), "bounds")?.as_str() {
        "paper" => Bounds::FIELD,
        "exact" => Bounds::from(measurable_range(&r.setup(&a.setup, None)?)?),
        other => {
            return Err(Error::Usage(format!(
                "unknown bounds {other:?} (expected paper or exact)"
            )))
        }
    };
    let report_bin: f64 = r.get(a.report_bin, "report_bin")?;

    let subset = match (&a.split, &a.subset) {
        (Some(path), Some(which)) => {
            let want = match which.as_str() {
                "train" => Split::Train,
                "val" => Split::Val,
                other => return Err(Error::Usage(format!("unknown subset {other:?}"))),
            };
            Some((read_split_csv(path)?, want))
        }
        _ => None,
    };
    let keep = |id: &str| match &subset {
        Some((map, want)) => map.get(id) == Some(want),
        None => true,
    };
    let samples = load_samples(
        r,
        &a.manifest,
        &a.extractor,
        a.setup.fps,
        ckpt.variant,
        Some(&keep),
    )?;
    let records = evaluate(&ckpt.network, &samples)?;

    let mut tags: Vec<SourceTag> = records.iter().map(|r| r.source_tag).collect();
    tags.sort_by_key(|t| t.as_str());
    tags.dedup();
    let variant = ckpt.variant.as_str().to_string();
    let mut rows = Vec::new();
    for &tag in &tags {
        let subset: Vec<EvalRecord> = records
            .iter()
            .filter(|r| r.source_tag == tag)
            .cloned()
            .collect();
        rows.push(SummaryRow {
            dataset: tag.to_string(),
            variant: variant.clone(),
            summary: summarize(&subset, bounds)?,
        });
    }
    if tags.len() > 1 {
        rows.push(SummaryRow {
            dataset: "all".into(),
            variant: variant.clone(),
            summary: summarize(&records, bounds)?,
        });
    }

    create_dir(&a.out)?;
    write_summary_csv(&a.out.join("summary.csv"), &rows)?;
    let report = binned_report(&records, report_bin)?;
    write_report_csv(&a.out.join("report.csv"), &report)?;
    write_predictions_csv(&a.out.join("predictions.csv"), &records)?;

    if let Some(series_path) = &a.series {
        let series = read_series_csv(series_path, r.get(a.setup.fps, "fps")?)?;
        let windows = TurbulenceWindows {
            instantaneous_s: r.get(None, "sigma_window")?,
            mean_s: r.get(None, "sigma_mean_window")?,
        };
        let stats = sigma_u_band(&series, r.get(None, "sigma_bin")?, windows)?;
        write_sigma_csv(&a.out.join("sigma.csv"), &stats)?;
        let cmp = compare_to_turbulence(&report, &stats)?;
        let mut csv = String::from("bin_center_mps,std_over_sigma_u\n");
        for (c, q) in cmp.bin_center_mps.iter().zip(&cmp.ratio) {
            csv.push_str(&format!("{c},{q}\n"));
        }
        let p = a.out.join("spread.csv");
        fs::write(&p, csv).map_err(|e| Error::io(&p, e))?;
    }
    Ok(rows)
}

/// RMSE summary that tolerates an empty measurable subset.
fn summarize(records: &[EvalRecord], bounds: Bounds) -> Result<windvis_core::eval::RmseSummary> {
    match rmse(records, Some(bounds)) {
        Err(windvis_core::Error::EmptySelection { .. }) => {
            let mut s = rmse(records, None)?;
            s.measurable_rmse_mps = f64::NAN;
            s.bounds = bounds;
            s.n_measurable = 0;
            Ok(s)
        }
        other => Ok(other?),
    }
}

/// Entry point used by the binary: returns the process exit code.
pub fn main_with_args<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = write!(err, "{e}");
            return code;
        }
    };
    match run(cli, out) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn speed_ranges() {
        let mut rng = Rng::new(0);
        assert_eq!(parse_speeds("1:10:1", &mut rng).unwrap().len(), 10);
        assert_eq!(
            parse_speeds("0.5:1.5:0.25", &mut rng).unwrap(),
            vec![0.5, 0.75, 1.0, 1.25, 1.5]
        );
        assert_eq!(parse_speeds("12,14", &mut rng).unwrap(), vec![12.0, 14.0]);
        assert_eq!(parse_speeds("3", &mut rng).unwrap(), vec![3.0]);
        let u = parse_speeds("uniform:1:10:60", &mut rng).unwrap();
        assert_eq!(u.len(), 60);
        assert!(u.iter().all(|&s| (1.0..10.0).contains(&s)));
        for bad in ["", "a", "3:1:1", "1:2:0", "uniform:2:1:3", "-1", "1:2"] {
            assert!(parse_speeds(bad, &mut rng).is_err(), "{bad}");
        }
    }

    #[test]
    fn decimal_trimming() {
        assert_eq!(trim_decimal(0.75), "0.75");
        assert_eq!(trim_decimal(11.25), "11.25");
        assert_eq!(trim_decimal(7.5), "7.5");
        assert_eq!(trim_decimal(0.37 * 7.5), "2.775");
        assert_eq!(trim_decimal(3.0), "3");
    }

    #[test]
    fn every_key_has_a_parsable_default() {
        let r = Resolver::new(None);
        r.setup(&SetupArgs::default(), Some(&FrameArgs::default()))
            .unwrap();
        r.extractor(&ExtractorArgs::default()).unwrap();
        assert_eq!(r.cap(None).unwrap(), None);
        let mut seen = std::collections::HashSet::new();
        assert!(KEYS.iter().all(|(k, _)| seen.insert(*k)));
    }

    #[test]
    fn precedence() {
        let cfg = Config::parse("lr = 0.5\nfps = 30\n", None).unwrap();
        let r = Resolver::new(Some(cfg));
        assert_eq!(r.get::<f64>(Some(0.1), "lr").unwrap(), 0.1);
        assert_eq!(r.get::<f64>(None, "lr").unwrap(), 0.5);
        assert_eq!(r.get::<f64>(None, "momentum").unwrap(), 0.9);
        assert_eq!(
            r.setup(&SetupArgs::default(), None).unwrap().frame_rate_hz,
            30.0
        );
    }
}
