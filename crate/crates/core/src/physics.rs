//! Measurable wind-speed range and turbulence variability.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::flagsim::{PhysicalSetup, WindSeries};

/// Speeds whose characteristic frequency `U/L` is observable in a clip:
/// at least one full cycle per clip (`U ≥ L/T`) and no faster than the
/// Nyquist frequency (`U ≤ L · f_s / 2`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeasurableRange {
    pub u_low_mps: f64,
    pub u_high_mps: f64,
    pub f_nyquist_hz: f64,
}

pub fn measurable_range(setup: &PhysicalSetup) -> Result<MeasurableRange> {
    setup.validate()?;
    let f_nyquist_hz = 0.5 * setup.frame_rate_hz;
    Ok(MeasurableRange {
        u_low_mps: setup.flag_length_m / setup.clip_duration_s,
        u_high_mps: setup.flag_length_m * f_nyquist_hz,
        f_nyquist_hz,
    })
}

/// Inclusive label interval used to restrict error metrics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bounds {
    pub low: f64,
    pub high: f64,
}

impl Bounds {
    /// The rounded field-flag range, 0.75–11 m/s (the exact upper limit
    /// for that setup is 11.25 m/s).
    pub const FIELD: Bounds = Bounds {
        low: 0.75,
        high: 11.0,
    };

    pub const UNBOUNDED: Bounds = Bounds {
        low: f64::NEG_INFINITY,
        high: f64::INFINITY,
    };

    pub fn contains(&self, u: f64) -> bool {
        self.low <= u && u <= self.high
    }
}

impl From<MeasurableRange> for Bounds {
    fn from(r: MeasurableRange) -> Self {
        Bounds {
            low: r.u_low_mps,
            high: r.u_high_mps,
        }
    }
}

/// Averaging windows pairing "instantaneous" short means with long means.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TurbulenceWindows {
    pub instantaneous_s: f64,
    pub mean_s: f64,
}

impl Default for TurbulenceWindows {
    fn default() -> Self {
        Self {
            instantaneous_s: 2.0,
            mean_s: 60.0,
        }
    }
}

/// One short-window fluctuation `u' = ū_short − Ū` and the long-window mean
/// `Ū` of the block it belongs to.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Fluctuation {
    pub block_mean_mps: f64,
    pub u_prime_mps: f64,
}

/// Splits the series into consecutive long blocks and each block into
/// consecutive short windows; incomplete trailing blocks and windows are
/// dropped.
pub fn fluctuation_series(
    series: &WindSeries,
    windows: TurbulenceWindows,
) -> Result<Vec<Fluctuation>> {
    let fs = series.sample_rate_hz;
    let short = libm::round(windows.instantaneous_s * fs) as usize;
    let long = libm::round(windows.mean_s * fs) as usize;
    if short == 0 || long < short {
        return Err(Error::invalid(
            "turbulence windows",
            "need 0 < instantaneous window ≤ mean window",
        ));
    }
    if series.len() < long {
        return Err(Error::SeriesTooShort {
            needed: long,
            available: series.len(),
        });
    }
    let per_block = long / short;
    let mut out = Vec::with_capacity(series.len() / long * per_block);
    for block in series.instantaneous_mps.chunks_exact(long) {
        let block_mean = block.iter().sum::<f64>() / long as f64;
        for w in block.chunks_exact(short).take(per_block) {
            let m = w.iter().sum::<f64>() / short as f64;
            out.push(Fluctuation {
                block_mean_mps: block_mean,
                u_prime_mps: m - block_mean,
            });
        }
    }
    Ok(out)
}

/// σ_u per band of long-window mean speed.
#[derive(Debug, Clone, PartialEq)]
pub struct TurbulenceStats {
    pub bin_width_mps: f64,
    pub instantaneous_window_s: f64,
    pub bin_centers_mps: Vec<f64>,
    pub sigma_u_mps: Vec<f64>,
    pub counts: Vec<usize>,
}

/// Index of the half-open bin `[k·w, (k+1)·w)` holding `x`.
pub fn bin_index(x: f64, width: f64) -> i64 {
    libm::floor(x / width) as i64
}

pub fn bin_center(index: i64, width: f64) -> f64 {
    (index as f64 + 0.5) * width
}

/// Groups fluctuations of all series by the bin of their block mean and
/// reports `σ_u = √(mean u'²)` per occupied bin.
pub fn sigma_u_band(
    series: &[WindSeries],
    bin_width_mps: f64,
    windows: TurbulenceWindows,
) -> Result<TurbulenceStats> {
    if !(bin_width_mps.is_finite() && bin_width_mps > 0.0) {
        return Err(Error::invalid("bin width", "must be positive"));
    }
    if series.is_empty() {
        return Err(Error::Empty("wind series list"));
    }
    let mut bins: BTreeMap<i64, (f64, usize)> = BTreeMap::new();
    for s in series {
        for f in fluctuation_series(s, windows)? {
            let e = bins
                .entry(bin_index(f.block_mean_mps, bin_width_mps))
                .or_insert((0.0, 0));
            e.0 += f.u_prime_mps * f.u_prime_mps;
            e.1 += 1;
        }
    }
    let mut stats = TurbulenceStats {
        bin_width_mps,
        instantaneous_window_s: windows.instantaneous_s,
        bin_centers_mps: Vec::with_capacity(bins.len()),
        sigma_u_mps: Vec::with_capacity(bins.len()),
        counts: Vec::with_capacity(bins.len()),
    };
    for (k, (sum_sq, n)) in bins {
        stats.bin_centers_mps.push(bin_center(k, bin_width_mps));
        stats.sigma_u_mps.push(libm::sqrt(sum_sq / n as f64));
        stats.counts.push(n);
    }
    Ok(stats)
}
