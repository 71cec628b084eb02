//! Procedural flapping-flag clips.
//!
//! A wind series `u(t)` is an AR(1) (discretised Ornstein–Uhlenbeck)
//! fluctuation around a mean speed, sampled at the camera frame rate. The
//! flag is a travelling-wave silhouette whose phase integrates the
//! characteristic frequency `u / L`, so clip motion encodes the
//! instantaneous speed while labels carry a long-window average of it.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::f64::consts::PI;

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::types::{ClipTensor, SourceTag};

/// Camera and flag geometry.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhysicalSetup {
    pub flag_length_m: f64,
    pub frame_rate_hz: f64,
    pub clip_duration_s: f64,
    pub frame_height_px: usize,
    pub frame_width_px: usize,
}

impl Default for PhysicalSetup {
    /// Field flag (1.5 m), 15 fps, 2 s clips, 32×32 frames.
    fn default() -> Self {
        Self {
            flag_length_m: 1.5,
            frame_rate_hz: 15.0,
            clip_duration_s: 2.0,
            frame_height_px: 32,
            frame_width_px: 32,
        }
    }
}

impl PhysicalSetup {
    /// The small wind-tunnel flag (0.37 m), otherwise like the default.
    pub fn tunnel() -> Self {
        Self {
            flag_length_m: 0.37,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if !positive(self.flag_length_m) {
            return Err(Error::invalid("setup", "flag length must be positive"));
        }
        if !positive(self.frame_rate_hz) {
            return Err(Error::invalid("setup", "frame rate must be positive"));
        }
        if !positive(self.clip_duration_s) {
            return Err(Error::invalid("setup", "clip duration must be positive"));
        }
        if self.frame_height_px == 0 || self.frame_width_px == 0 {
            return Err(Error::invalid("setup", "frame dimensions must be positive"));
        }
        if self.frames_per_clip() < 2 {
            return Err(Error::invalid(
                "setup",
                "clip duration × frame rate must round to at least 2 frames",
            ));
        }
        Ok(())
    }

    pub fn frames_per_clip(&self) -> usize {
        libm::round(self.clip_duration_s * self.frame_rate_hz) as usize
    }

    pub fn seconds_to_samples(&self, seconds: f64) -> usize {
        libm::round(seconds * self.frame_rate_hz).max(0.0) as usize
    }
}

/// Frequency of a fluid element passing a flag of length `L`: `u / L`.
pub fn characteristic_frequency(u_mps: f64, setup: &PhysicalSetup) -> f64 {
    u_mps / setup.flag_length_m
}

/// Parameters of the turbulence process and of the label average.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TurbulenceSpec {
    /// σ_u / Ū of the stationary process.
    pub intensity: f64,
    pub correlation_time_s: f64,
    pub averaging_window_s: f64,
    /// Shift the clamped series so its whole-span mean equals Ū.
    pub exact_mean: bool,
}

impl Default for TurbulenceSpec {
    fn default() -> Self {
        Self {
            intensity: 0.15,
            correlation_time_s: 1.0,
            averaging_window_s: 60.0,
            exact_mean: false,
        }
    }
}

impl TurbulenceSpec {
    pub fn with_intensity(intensity: f64) -> Self {
        Self {
            intensity,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.intensity.is_finite() || self.intensity < 0.0 {
            return Err(Error::invalid("intensity", "must be finite and ≥ 0"));
        }
        if self.intensity > 1.0 {
            return Err(Error::IntensityOutOfRange(self.intensity));
        }
        if !(self.correlation_time_s.is_finite() && self.correlation_time_s > 0.0) {
            return Err(Error::invalid("correlation time", "must be positive"));
        }
        if !(self.averaging_window_s.is_finite() && self.averaging_window_s > 0.0) {
            return Err(Error::invalid("averaging window", "must be positive"));
        }
        Ok(())
    }

    /// AR(1) coefficient for one step of `dt` seconds.
    pub fn ar_coefficient(&self, dt: f64) -> f64 {
        libm::exp(-dt / self.correlation_time_s)
    }
}

/// Instantaneous wind speed sampled at the camera frame rate.
#[derive(Debug, Clone, PartialEq)]
pub struct WindSeries {
    pub mean_speed_mps: f64,
    pub turbulence_intensity: f64,
    pub averaging_window_s: f64,
    pub sample_rate_hz: f64,
    pub instantaneous_mps: Vec<f64>,
}

impl WindSeries {
    /// Wraps measured or hand-made samples.
    pub fn from_samples(samples: Vec<f64>, sample_rate_hz: f64) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Empty("wind series"));
        }
        if !(sample_rate_hz.is_finite() && sample_rate_hz > 0.0) {
            return Err(Error::invalid(
                "wind series",
                "sample rate must be positive",
            ));
        }
        if samples.iter().any(|u| !u.is_finite() || *u < 0.0) {
            return Err(Error::invalid(
                "wind series",
                "speeds must be finite and ≥ 0",
            ));
        }
        let mean = samples.iter().sum::<f64>() / samples.len() as f64;
        Ok(Self {
            mean_speed_mps: mean,
            turbulence_intensity: 0.0,
            averaging_window_s: TurbulenceSpec::default().averaging_window_s,
            sample_rate_hz,
            instantaneous_mps: samples,
        })
    }

    pub fn len(&self) -> usize {
        self.instantaneous_mps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instantaneous_mps.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.len() as f64 / self.sample_rate_hz
    }

    /// Mean over samples `[lo, hi)`, clipped to the series.
    pub fn window_mean(&self, lo: usize, hi: usize) -> f64 {
        let hi = hi.min(self.len());
        let lo = lo.min(hi);
        if lo == hi {
            return self.instantaneous_mps[lo.min(self.len() - 1)];
        }
        let window = &self.instantaneous_mps[lo..hi];
        if window.iter().all(|&u| u == window[0]) {
            return window[0];
        }
        window.iter().sum::<f64>() / (hi - lo) as f64
    }

    /// Label for a clip of `frames` samples starting at `start`, averaged over
    /// `averaging_window_s` placed per `placement` and truncated at the edges.
    pub fn label_for_clip(&self, start: usize, frames: usize, placement: LabelWindow) -> f64 {
        let w = self.averaging_window_s * self.sample_rate_hz;
        let (lo, hi) = match placement {
            LabelWindow::Centered => {
                let c = start as f64 + frames as f64 / 2.0;
                (c - w / 2.0, c + w / 2.0)
            }
            LabelWindow::Leading => (start as f64, start as f64 + w),
            LabelWindow::Trailing => {
                let end = (start + frames) as f64;
                (end - w, end)
            }
        };
        let lo = libm::round(lo).max(0.0) as usize;
        let hi = (libm::round(hi).max(0.0) as usize).min(self.len());
        self.window_mean(lo, hi)
    }
}

/// Where the label's averaging window sits relative to the clip.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LabelWindow {
    /// Centred on the clip midpoint.
    #[default]
    Centered,
    /// Starts at the first frame.
    Leading,
    /// Ends at the last frame.
    Trailing,
}

impl core::str::FromStr for LabelWindow {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "centered" => Ok(Self::Centered),
            "leading" => Ok(Self::Leading),
            "trailing" => Ok(Self::Trailing),
            _ => Err(Error::invalid(
                "label window",
                format!("unknown placement {s:?}"),
            )),
        }
    }
}

impl LabelWindow {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Centered => "centered",
            Self::Leading => "leading",
            Self::Trailing => "trailing",
        }
    }
}

/// `u(t) = max(0, Ū + u'(t))` with `u'` a stationary AR(1) process of
/// standard deviation `intensity × Ū` and the configured correlation time.
pub fn synthesize_wind_series(
    mean_mps: f64,
    turbulence: &TurbulenceSpec,
    setup: &PhysicalSetup,
    num_samples: usize,
    rng: &mut Rng,
) -> Result<WindSeries> {
    turbulence.validate()?;
    setup.validate()?;
    if !mean_mps.is_finite() || mean_mps < 0.0 {
        return Err(Error::invalid("mean speed", "must be finite and ≥ 0"));
    }
    if num_samples == 0 {
        return Err(Error::Empty("wind series"));
    }

    let sigma = turbulence.intensity * mean_mps;
    let phi = turbulence.ar_coefficient(1.0 / setup.frame_rate_hz);
    let innovation = sigma * libm::sqrt(1.0 - phi * phi);

    let mut fluct = Vec::with_capacity(num_samples);
    let mut x: f64 = sigma * Distribution::<f64>::sample(&StandardNormal, rng);
    fluct.push(x);
    for _ in 1..num_samples {
        let e: f64 = StandardNormal.sample(rng);
        x = phi * x + innovation * e;
        fluct.push(x);
    }

    let instantaneous = if turbulence.exact_mean && sigma > 0.0 {
        exact_mean_series(mean_mps, &fluct)
    } else {
        fluct.iter().map(|v| (mean_mps + v).max(0.0)).collect()
    };

    Ok(WindSeries {
        mean_speed_mps: mean_mps,
        turbulence_intensity: turbulence.intensity,
        averaging_window_s: turbulence.averaging_window_s,
        sample_rate_hz: setup.frame_rate_hz,
        instantaneous_mps: instantaneous,
    })
}

/// Centres the fluctuations, then finds the shift `s` for which
/// `mean(max(0, Ū + u' − s)) = Ū` by bisection (the mean is monotone in `s`).
fn exact_mean_series(mean: f64, fluct: &[f64]) -> Vec<f64> {
    let n = fluct.len() as f64;
    let centre = fluct.iter().sum::<f64>() / n;
    let centred: Vec<f64> = fluct.iter().map(|v| v - centre).collect();
    let build = |s: f64| -> Vec<f64> { centred.iter().map(|v| (mean + v - s).max(0.0)).collect() };
    let mean_of = |s: f64| build(s).iter().sum::<f64>() / n;

    let mut series = build(0.0);
    if series.iter().all(|&u| u > 0.0) {
        return series;
    }
    // Clamping only raises the mean, so the shift is non-negative.
    let (mut lo, mut hi) = (
        0.0,
        centred.iter().fold(0.0f64, |m, v| m.max(v.abs())) + mean,
    );
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mean_of(mid) > mean {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= f64::EPSILON * mean.max(1.0) {
            break;
        }
    }
    let s = 0.5 * (lo + hi);
    series = build(s);
    series
}

/// Flag silhouette rendering parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlagRenderSpec {
    pub amplitude_px: f64,
    pub wave_mode: u32,
    pub background_level: f64,
    /// Additive background change per second of series time.
    pub background_drift_per_s: f64,
    pub band_half_width_px: f64,
    /// Gaussian pixel noise, applied before clamping to [0, 1].
    pub noise_std: f64,
}

impl Default for FlagRenderSpec {
    fn default() -> Self {
        Self {
            amplitude_px: 6.0,
            wave_mode: 1,
            background_level: 0.2,
            background_drift_per_s: 0.0,
            band_half_width_px: 2.0,
            noise_std: 0.0,
        }
    }
}

impl FlagRenderSpec {
    pub fn validate(&self, setup: &PhysicalSetup) -> Result<()> {
        if !(self.amplitude_px.is_finite() && self.amplitude_px > 0.0) {
            return Err(Error::invalid("render spec", "amplitude must be positive"));
        }
        if self.amplitude_px >= setup.frame_height_px as f64 / 2.0 {
            return Err(Error::invalid(
                "render spec",
                format!(
                    "amplitude {} px must be below half the frame height ({} px)",
                    self.amplitude_px, setup.frame_height_px
                ),
            ));
        }
        if self.wave_mode == 0 {
            return Err(Error::invalid("render spec", "wave mode must be positive"));
        }
        if !(0.0..=1.0).contains(&self.background_level) {
            return Err(Error::invalid(
                "render spec",
                "background level must be in [0, 1]",
            ));
        }
        if !self.background_drift_per_s.is_finite() {
            return Err(Error::NonFinite("background drift"));
        }
        if !(self.band_half_width_px.is_finite() && self.band_half_width_px >= 0.0) {
            return Err(Error::invalid("render spec", "band half width must be ≥ 0"));
        }
        if !(self.noise_std.is_finite() && self.noise_std >= 0.0) {
            return Err(Error::invalid("render spec", "noise std must be ≥ 0"));
        }
        Ok(())
    }
}

/// Phase (in cycles) accumulated from sample `start`, left-Riemann sum of
/// `f(u) / f_s`; entry `k` is the phase at `start + k`, for `k ∈ 0..=n`.
pub fn phase_track(series: &WindSeries, setup: &PhysicalSetup, start: usize, n: usize) -> Vec<f64> {
    let mut phase = Vec::with_capacity(n + 1);
    let mut acc = 0.0;
    phase.push(acc);
    for &u in &series.instantaneous_mps[start..start + n] {
        acc += characteristic_frequency(u, setup) / setup.frame_rate_hz;
        phase.push(acc);
    }
    phase
}

/// Renders the clip whose first frame is at `clip_start_s` of `series`.
///
/// The start time is snapped to the nearest series sample. `rng` supplies the
/// initial wave phase and any pixel noise.
pub fn render_clip(
    series: &WindSeries,
    spec: &FlagRenderSpec,
    setup: &PhysicalSetup,
    clip_start_s: f64,
    rng: &mut Rng,
) -> Result<ClipTensor> {
    setup.validate()?;
    spec.validate(setup)?;
    if series.sample_rate_hz != setup.frame_rate_hz {
        return Err(Error::invalid(
            "wind series",
            "series must be sampled at the camera frame rate",
        ));
    }
    let frames = setup.frames_per_clip();
    let start = libm::round(clip_start_s * setup.frame_rate_hz);
    if !clip_start_s.is_finite() || start < 0.0 || start as usize + frames > series.len() {
        return Err(Error::WindowOutOfRange {
            start_s: clip_start_s,
            end_s: clip_start_s + setup.clip_duration_s,
            span_s: series.duration_s(),
        });
    }
    let start = start as usize;

    let (h, w) = (setup.frame_height_px, setup.frame_width_px);
    let phase = phase_track(series, setup, start, frames);
    let phase0: f64 = rng.random();
    let mode = spec.wave_mode as f64;
    let centre = h as f64 / 2.0;

    let mut pixels = Vec::with_capacity(frames * h * w);
    let mut frame = alloc::vec![0.0f32; h * w];
    for (k, phi) in phase.iter().take(frames).enumerate() {
        let t = (start + k) as f64 / setup.frame_rate_hz;
        let bg = (spec.background_level + spec.background_drift_per_s * t).clamp(0.0, 1.0);
        for x in 0..w {
            let arg = 2.0 * PI * (phase0 + phi) - mode * PI * x as f64 / w as f64;
            let yc = centre + spec.amplitude_px * libm::sin(arg);
            for y in 0..h {
                let dist = libm::fabs(y as f64 + 0.5 - yc);
                let cover = (spec.band_half_width_px + 0.5 - dist).clamp(0.0, 1.0);
                frame[y * w + x] = (bg + (1.0 - bg) * cover) as f32;
            }
        }
        if spec.noise_std > 0.0 {
            for p in frame.iter_mut() {
                let e: f64 = StandardNormal.sample(rng);
                *p = (*p as f64 + spec.noise_std * e).clamp(0.0, 1.0) as f32;
            }
        }
        pixels.extend_from_slice(&frame);
    }
    ClipTensor::new(
        frames,
        h,
        w,
        setup.frame_rate_hz,
        start as f64 / setup.frame_rate_hz,
        pixels,
    )
}

/// Everything needed to synthesise a labelled dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetPlan {
    pub speeds: Vec<f64>,
    pub clips_per_speed: usize,
    pub turbulence: TurbulenceSpec,
    pub setup: PhysicalSetup,
    pub render: FlagRenderSpec,
    /// Length of each speed's series; defaults to
    /// `max(clips_per_speed × T, averaging window)`.
    pub series_duration_s: Option<f64>,
    pub label_window: LabelWindow,
    pub source_tag: SourceTag,
}

impl DatasetPlan {
    pub fn new(speeds: Vec<f64>, clips_per_speed: usize) -> Self {
        Self {
            speeds,
            clips_per_speed,
            turbulence: TurbulenceSpec::default(),
            setup: PhysicalSetup::default(),
            render: FlagRenderSpec::default(),
            series_duration_s: None,
            label_window: LabelWindow::Centered,
            source_tag: SourceTag::Synthetic,
        }
    }

    pub fn series_samples(&self) -> usize {
        match self.series_duration_s {
            Some(d) => self.setup.seconds_to_samples(d),
            None => {
                let clips = self.clips_per_speed * self.setup.frames_per_clip();
                clips.max(
                    self.setup
                        .seconds_to_samples(self.turbulence.averaging_window_s),
                )
            }
        }
    }
}

/// One clip to be rendered from a planned series.
#[derive(Debug, Clone, PartialEq)]
pub struct ClipSlot {
    pub clip_id: String,
    pub series_index: usize,
    pub clip_index: usize,
    pub start_index: usize,
    pub timestamp_s: f64,
    pub label_mps: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlannedSeries {
    pub series: WindSeries,
    pub slots: Vec<ClipSlot>,
}

fn series_stream(series_index: usize) -> u64 {
    (series_index as u64) << 32
}

fn clip_stream(series_index: usize, clip_index: usize) -> u64 {
    series_stream(series_index) | (clip_index as u64 + 1)
}

/// Synthesises one wind series per mean speed and slices it into evenly
/// spaced, non-overlapping clip slots with window-averaged labels.
pub fn plan_dataset(plan: &DatasetPlan, rng: &Rng) -> Result<Vec<PlannedSeries>> {
    if plan.speeds.is_empty() {
        return Err(Error::Empty("speed list"));
    }
    if plan.clips_per_speed == 0 {
        return Err(Error::invalid("clips per speed", "must be positive"));
    }
    plan.setup.validate()?;
    plan.render.validate(&plan.setup)?;
    plan.turbulence.validate()?;

    let frames = plan.setup.frames_per_clip();
    let samples = plan.series_samples();
    let needed = plan.clips_per_speed * frames;
    if needed > samples {
        return Err(Error::SeriesTooShort {
            needed,
            available: samples,
        });
    }
    let stride = samples / plan.clips_per_speed;

    plan.speeds
        .iter()
        .enumerate()
        .map(|(i, &speed)| {
            let mut series_rng = rng.derive(series_stream(i));
            let series = synthesize_wind_series(
                speed,
                &plan.turbulence,
                &plan.setup,
                samples,
                &mut series_rng,
            )?;
            let slots = (0..plan.clips_per_speed)
                .map(|k| {
                    let start = k * stride;
                    ClipSlot {
                        clip_id: format!("s{i:03}_c{k:04}"),
                        series_index: i,
                        clip_index: k,
                        start_index: start,
                        timestamp_s: start as f64 / plan.setup.frame_rate_hz,
                        label_mps: series.label_for_clip(start, frames, plan.label_window),
                    }
                })
                .collect();
            Ok(PlannedSeries { series, slots })
        })
        .collect()
}

/// Renders one slot. Each slot has its own derived random stream, so slots
/// may be rendered in any order or concurrently.
pub fn render_slot(
    planned: &PlannedSeries,
    slot: &ClipSlot,
    plan: &DatasetPlan,
    rng: &Rng,
) -> Result<ClipTensor> {
    let mut clip_rng = rng.derive(clip_stream(slot.series_index, slot.clip_index));
    render_clip(
        &planned.series,
        &plan.render,
        &plan.setup,
        slot.timestamp_s,
        &mut clip_rng,
    )
}
