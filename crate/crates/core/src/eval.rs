//! Error summaries and binned prediction reports.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::physics::{bin_center, bin_index, Bounds, TurbulenceStats};
use crate::types::SourceTag;

#[derive(Debug, Clone, PartialEq)]
pub struct EvalRecord {
    pub clip_id: String,
    /// Label (long-window mean speed).
    pub y: f64,
    pub y_hat: f64,
    pub source_tag: SourceTag,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RmseSummary {
    pub overall_rmse_mps: f64,
    pub measurable_rmse_mps: f64,
    pub bounds: Bounds,
    pub n_overall: usize,
    pub n_measurable: usize,
}

fn rmse_where(records: &[EvalRecord], keep: impl Fn(&EvalRecord) -> bool) -> (f64, usize) {
    let (sum, n) = records
        .iter()
        .filter(|r| keep(r))
        .fold((0.0, 0usize), |(s, n), r| {
            let e = r.y - r.y_hat;
            (s + e * e, n + 1)
        });
    (libm::sqrt(sum / n as f64), n)
}

/// Overall RMSE and RMSE restricted to labels inside `bounds` (inclusive;
/// everything when `None`).
pub fn rmse(records: &[EvalRecord], bounds: Option<Bounds>) -> Result<RmseSummary> {
    if records.is_empty() {
        return Err(Error::Empty("evaluation records"));
    }
    if records
        .iter()
        .any(|r| !r.y.is_finite() || !r.y_hat.is_finite())
    {
        return Err(Error::NonFinite("evaluation record"));
    }
    let bounds = bounds.unwrap_or(Bounds::UNBOUNDED);
    let (overall, n_overall) = rmse_where(records, |_| true);
    let (measurable, n_measurable) = rmse_where(records, |r| bounds.contains(r.y));
    if n_measurable == 0 {
        return Err(Error::EmptySelection {
            low: bounds.low,
            high: bounds.high,
        });
    }
    Ok(RmseSummary {
        overall_rmse_mps: overall,
        measurable_rmse_mps: measurable,
        bounds,
        n_overall,
        n_measurable,
    })
}

/// Mean and population standard deviation of predictions per label bin.
#[derive(Debug, Clone, PartialEq)]
pub struct BinnedReport {
    pub bin_width_mps: f64,
    pub bin_center_mps: Vec<f64>,
    pub mean_prediction_mps: Vec<f64>,
    pub std_prediction_mps: Vec<f64>,
    pub count: Vec<usize>,
}

impl BinnedReport {
    pub fn len(&self) -> usize {
        self.bin_center_mps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bin_center_mps.is_empty()
    }

    /// Whether mean predictions never decrease across bins whose centre lies
    /// inside `bounds`.
    pub fn is_monotone_within(&self, bounds: Bounds) -> bool {
        let means: Vec<f64> = self
            .bin_center_mps
            .iter()
            .zip(&self.mean_prediction_mps)
            .filter(|(c, _)| bounds.contains(**c))
            .map(|(_, m)| *m)
            .collect();
        means.windows(2).all(|w| w[0] <= w[1])
    }
}

/// Bins records by label into half-open intervals of `bin_mps`; empty bins
/// are omitted.
pub fn binned_report(records: &[EvalRecord], bin_mps: f64) -> Result<BinnedReport> {
    if records.is_empty() {
        return Err(Error::Empty("evaluation records"));
    }
    if !(bin_mps.is_finite() && bin_mps > 0.0) {
        return Err(Error::invalid("bin width", "must be positive"));
    }
    let mut bins: BTreeMap<i64, Vec<f64>> = BTreeMap::new();
    for r in records {
        bins.entry(bin_index(r.y, bin_mps))
            .or_default()
            .push(r.y_hat);
    }
    let mut report = BinnedReport {
        bin_width_mps: bin_mps,
        bin_center_mps: Vec::with_capacity(bins.len()),
        mean_prediction_mps: Vec::with_capacity(bins.len()),
        std_prediction_mps: Vec::with_capacity(bins.len()),
        count: Vec::with_capacity(bins.len()),
    };
    for (k, preds) in bins {
        let n = preds.len() as f64;
        let mean = preds.iter().sum::<f64>() / n;
        let var = preds.iter().map(|p| (p - mean) * (p - mean)).sum::<f64>() / n;
        report.bin_center_mps.push(bin_center(k, bin_mps));
        report.mean_prediction_mps.push(mean);
        report.std_prediction_mps.push(libm::sqrt(var));
        report.count.push(preds.len());
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TurbulenceComparison {
    pub bin_center_mps: Vec<f64>,
    /// Prediction spread over σ_u, per report bin.
    pub ratio: Vec<f64>,
    /// Overlapping bins skipped because σ_u was zero.
    pub skipped_zero_sigma: usize,
}

impl TurbulenceComparison {
    pub fn median_ratio(&self) -> Option<f64> {
        median(&self.ratio)
    }
}

/// For each report bin, pools the σ_u bins whose centres fall inside it
/// (count-weighted root mean square) and divides the prediction standard
/// deviation by the pooled σ_u.
pub fn compare_to_turbulence(
    report: &BinnedReport,
    stats: &TurbulenceStats,
) -> Result<TurbulenceComparison> {
    let mut out = TurbulenceComparison {
        bin_center_mps: Vec::new(),
        ratio: Vec::new(),
        skipped_zero_sigma: 0,
    };
    let half = report.bin_width_mps / 2.0;
    for (&centre, &spread) in report.bin_center_mps.iter().zip(&report.std_prediction_mps) {
        let (lo, hi) = (centre - half, centre + half);
        let (mut sum_sq, mut n) = (0.0, 0usize);
        for ((&c, &s), &k) in stats
            .bin_centers_mps
            .iter()
            .zip(&stats.sigma_u_mps)
            .zip(&stats.counts)
        {
            if lo <= c && c < hi {
                sum_sq += s * s * k as f64;
                n += k;
            }
        }
        if n == 0 {
            continue;
        }
        let sigma = libm::sqrt(sum_sq / n as f64);
        if sigma == 0.0 {
            out.skipped_zero_sigma += 1;
            continue;
        }
        out.bin_center_mps.push(centre);
        out.ratio.push(spread / sigma);
    }
    if out.ratio.is_empty() && out.skipped_zero_sigma == 0 {
        return Err(Error::Empty("overlapping bins"));
    }
    Ok(out)
}

/// Median (mean of the middle pair for even lengths).
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    Some(if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;
    use alloc::format;
    use alloc::vec;
    use rand::Rng as _;

    fn recs(pairs: &[(f64, f64)]) -> Vec<EvalRecord> {
        pairs
            .iter()
            .enumerate()
            .map(|(i, &(y, y_hat))| EvalRecord {
                clip_id: format!("c{i}"),
                y,
                y_hat,
                source_tag: SourceTag::Synthetic,
            })
            .collect()
    }

    #[test]
    fn perfect_predictions() {
        let s = rmse(&recs(&[(1.0, 1.0), (4.0, 4.0)]), Some(Bounds::FIELD)).unwrap();
        assert_eq!((s.overall_rmse_mps, s.measurable_rmse_mps), (0.0, 0.0));
    }

    #[test]
    fn hand_rmse() {
        let s = rmse(&recs(&[(1.0, 2.0), (3.0, 5.0)]), None).unwrap();
        assert!((s.overall_rmse_mps - 1.5811).abs() < 1e-4);
        assert_eq!(s.overall_rmse_mps, libm::sqrt(2.5));
    }

    #[test]
    fn measurable_subset() {
        let s = rmse(
            &recs(&[(0.5, 1.5), (5.0, 6.0), (12.0, 13.0)]),
            Some(Bounds::FIELD),
        )
        .unwrap();
        assert_eq!(s.overall_rmse_mps, 1.0);
        assert_eq!(s.measurable_rmse_mps, 1.0);
        assert_eq!((s.n_overall, s.n_measurable), (3, 1));
    }

    #[test]
    fn empty_selection_is_an_error() {
        let e = rmse(&recs(&[(0.1, 0.1)]), Some(Bounds::FIELD));
        assert!(matches!(e, Err(Error::EmptySelection { .. })));
        assert!(rmse(&[], None).is_err());
    }

    #[test]
    fn unbounded_equals_overall() {
        let mut rng = Rng::new(3);
        let pairs: Vec<(f64, f64)> = (0..200)
            .map(|_| (rng.random_range(0.0..15.0), rng.random_range(0.0..15.0)))
            .collect();
        let r = recs(&pairs);
        let s = rmse(&r, Some(Bounds::UNBOUNDED)).unwrap();
        assert_eq!(s.overall_rmse_mps, s.measurable_rmse_mps);
        assert_eq!(s.overall_rmse_mps, rmse(&r, None).unwrap().overall_rmse_mps);
    }

    #[test]
    fn single_bin_population_std() {
        let r = binned_report(&recs(&[(3.2, 2.0), (3.7, 4.0)]), 1.0).unwrap();
        assert_eq!(r.bin_center_mps, vec![3.5]);
        assert_eq!(r.mean_prediction_mps, vec![3.0]);
        assert_eq!(r.std_prediction_mps, vec![1.0]);
        let r = binned_report(&recs(&[(3.2, 2.0)]), 1.0).unwrap();
        assert_eq!(r.std_prediction_mps, vec![0.0]);
    }

    #[test]
    fn binned_report_matches_oracle() {
        for seed in 0..10 {
            let mut rng = Rng::new(seed);
            let pairs: Vec<(f64, f64)> = (0..300)
                .map(|_| (rng.random_range(0.0..12.0), rng.random_range(-1.0..14.0)))
                .collect();
            let r = binned_report(&recs(&pairs), 1.0).unwrap();
            // oracle: scan every integer bin, skip empty ones
            let mut i = 0;
            for k in 0..12 {
                let preds: Vec<f64> = pairs
                    .iter()
                    .filter(|(y, _)| (k as f64) <= *y && *y < (k + 1) as f64)
                    .map(|p| p.1)
                    .collect();
                if preds.is_empty() {
                    continue;
                }
                let n = preds.len() as f64;
                let mean = preds.iter().sum::<f64>() / n;
                let sd = libm::sqrt(preds.iter().map(|p| (p - mean) * (p - mean)).sum::<f64>() / n);
                assert_eq!(r.bin_center_mps[i], k as f64 + 0.5);
                assert_eq!(r.count[i], preds.len());
                assert_eq!(r.mean_prediction_mps[i], mean);
                assert_eq!(r.std_prediction_mps[i], sd);
                i += 1;
            }
            assert_eq!(i, r.len());
        }
    }

    fn stats(centres: Vec<f64>, sigma: Vec<f64>) -> TurbulenceStats {
        let counts = vec![10; centres.len()];
        TurbulenceStats {
            bin_width_mps: 0.5,
            instantaneous_window_s: 2.0,
            bin_centers_mps: centres,
            sigma_u_mps: sigma,
            counts,
        }
    }

    #[test]
    fn ratio_one_when_spread_matches() {
        let report = BinnedReport {
            bin_width_mps: 1.0,
            bin_center_mps: vec![2.5, 3.5],
            mean_prediction_mps: vec![2.5, 3.5],
            std_prediction_mps: vec![0.4, 0.6],
            count: vec![5, 5],
        };
        let st = stats(vec![2.25, 2.75, 3.25, 3.75], vec![0.4, 0.4, 0.6, 0.6]);
        let c = compare_to_turbulence(&report, &st).unwrap();
        assert_eq!(c.ratio, vec![1.0, 1.0]);
        let flat = BinnedReport {
            std_prediction_mps: vec![0.0, 0.0],
            ..report.clone()
        };
        assert_eq!(
            compare_to_turbulence(&flat, &st).unwrap().ratio,
            vec![0.0, 0.0]
        );
    }

    #[test]
    fn zero_sigma_bins_skipped() {
        let report = BinnedReport {
            bin_width_mps: 1.0,
            bin_center_mps: vec![2.5, 3.5],
            mean_prediction_mps: vec![2.5, 3.5],
            std_prediction_mps: vec![0.4, 0.6],
            count: vec![5, 5],
        };
        let st = stats(vec![2.25, 3.25], vec![0.0, 0.3]);
        let c = compare_to_turbulence(&report, &st).unwrap();
        assert_eq!(c.skipped_zero_sigma, 1);
        assert_eq!(c.bin_center_mps, vec![3.5]);
        assert!(compare_to_turbulence(&report, &stats(vec![9.25], vec![1.0])).is_err());
    }

    #[test]
    fn medians() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), Some(2.5));
        assert_eq!(median(&[]), None);
    }

    #[test]
    fn monotonicity_check() {
        let r = BinnedReport {
            bin_width_mps: 1.0,
            bin_center_mps: vec![0.5, 1.5, 2.5, 11.5],
            mean_prediction_mps: vec![3.0, 1.0, 2.0, 0.0],
            std_prediction_mps: vec![0.0; 4],
            count: vec![1; 4],
        };
        assert!(r.is_monotone_within(Bounds::FIELD));
        assert!(!r.is_monotone_within(Bounds::UNBOUNDED));
    }
}
