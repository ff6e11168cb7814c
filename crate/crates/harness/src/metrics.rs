//! Evaluation metrics, cross-correlation and binned scatter statistics.

use std::fmt::Write as _;

use trunet_core::data::manifest::fmt_f64;
use trunet_core::data::{Manifest, Season};
use trunet_core::{Error, Result};

/// Observations strictly above this count toward R10 RMSE.
pub const R10_THRESHOLD: f64 = 10.0;

/// Sum in ascending order, so the result ignores input order.
fn ordered_sum(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v.into_iter().sum()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Metrics {
    pub rmse: f64,
    /// RMSE over cells with observation above 10 mm/day; `None` when no
    /// cell qualifies.
    pub r10_rmse: Option<f64>,
    pub mae: f64,
    /// Signed mean error, prediction minus observation.
    pub me: f64,
    pub count: usize,
    pub r10_count: usize,
}

impl Metrics {
    fn of(pairs: &[(f64, f64)]) -> Option<Self> {
        if pairs.is_empty() {
            return None;
        }
        let n = pairs.len() as f64;
        let diffs: Vec<f64> = pairs.iter().map(|(p, o)| p - o).collect();
        let r10: Vec<f64> = pairs.iter().filter(|(_, o)| *o > R10_THRESHOLD).map(|(p, o)| (p - o) * (p - o)).collect();
        let r10_count = r10.len();
        Some(Metrics {
            rmse: (ordered_sum(diffs.iter().map(|d| d * d).collect()) / n).sqrt(),
            r10_rmse: (r10_count > 0).then(|| (ordered_sum(r10) / r10_count as f64).sqrt()),
            mae: ordered_sum(diffs.iter().map(|d| d.abs()).collect()) / n,
            me: ordered_sum(diffs) / n,
            count: pairs.len(),
            r10_count,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub all: Metrics,
    /// Seasons with at least one cell, in DJF, MAM, JJA, SON order.
    pub seasons: Vec<(Season, Metrics)>,
}

/// Scores `predictions` against `observations`, overall and per season.
pub fn evaluate(predictions: &[f64], observations: &[f64], seasons: &[Season]) -> Result<EvalReport> {
    if predictions.len() != observations.len() || seasons.len() != observations.len() {
        return Err(Error::Data(format!(
            "length mismatch: {} predictions, {} observations, {} season labels",
            predictions.len(),
            observations.len(),
            seasons.len()
        )));
    }
    if observations.iter().any(|&o| !(o >= 0.0)) || predictions.iter().any(|p| !p.is_finite()) {
        return Err(Error::Data("observations must be non-negative and predictions finite".into()));
    }
    let pairs: Vec<(f64, f64)> = predictions.iter().copied().zip(observations.iter().copied()).collect();
    let all = Metrics::of(&pairs).ok_or_else(|| Error::Data("nothing to evaluate".into()))?;
    let seasons = Season::ALL
        .iter()
        .filter_map(|&s| {
            let bucket: Vec<_> = pairs.iter().zip(seasons).filter(|(_, &t)| t == s).map(|(p, _)| *p).collect();
            Metrics::of(&bucket).map(|m| (s, m))
        })
        .collect();
    Ok(EvalReport { all, seasons })
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "undefined".to_string(), |v| format!("{v:.4}"))
}

impl EvalReport {
    /// Aligned plain-text table, one row per bucket.
    pub fn to_table(&self) -> String {
        let mut s = format!(
            "{:<8}{:>12}{:>12}{:>12}{:>12}{:>10}{:>10}\n",
            "bucket", "rmse", "r10_rmse", "mae", "me", "cells", "r10_cells"
        );
        let rows = std::iter::once(("all", &self.all)).chain(self.seasons.iter().map(|(s, m)| (s.label(), m)));
        for (name, m) in rows {
            let _ = writeln!(
                s,
                "{:<8}{:>12.4}{:>12}{:>12.4}{:>12.4}{:>10}{:>10}",
                name,
                m.rmse,
                fmt_opt(m.r10_rmse),
                m.mae,
                m.me,
                m.count,
                m.r10_count
            );
        }
        s
    }

    pub fn to_manifest(&self) -> Manifest {
        let mut out = Manifest::new();
        let rows = std::iter::once(("all", &self.all)).chain(self.seasons.iter().map(|(s, m)| (s.label(), m)));
        for (name, m) in rows {
            out.set(format!("{name}.rmse"), fmt_f64(m.rmse))
                .set(format!("{name}.r10_rmse"), m.r10_rmse.map_or_else(|| "undefined".into(), fmt_f64))
                .set(format!("{name}.mae"), fmt_f64(m.mae))
                .set(format!("{name}.me"), fmt_f64(m.me))
                .set(format!("{name}.count"), m.count)
                .set(format!("{name}.r10_count"), m.r10_count);
        }
        out
    }
}

/// Cross-correlation of two linearly detrended series.
#[derive(Clone, Debug, PartialEq)]
pub struct Xcf {
    /// Correlation at lags `0..=max_lag`; `None` if either series is
    /// constant after detrending.
    pub lags: Vec<Option<f64>>,
    /// Two-sided 5% white-noise bound `1.96 / sqrt(N)`.
    pub threshold: f64,
}

/// Residuals of the least-squares line through `(t, x_t)`.
pub fn detrend(x: &[f64]) -> Vec<f64> {
    let n = x.len() as f64;
    let tm = (n - 1.0) / 2.0;
    let xm = x.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (t, &v) in x.iter().enumerate() {
        let dt = t as f64 - tm;
        sxy += dt * (v - xm);
        sxx += dt * dt;
    }
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    x.iter().enumerate().map(|(t, &v)| v - xm - slope * (t as f64 - tm)).collect()
}

/// `r_k = sum_t a_t b_{t+k} / sqrt(sum a^2 sum b^2)` over detrended series.
pub fn xcf(a: &[f64], b: &[f64], max_lag: usize) -> Result<Xcf> {
    if a.len() != b.len() {
        return Err(Error::Data(format!("series lengths differ: {} vs {}", a.len(), b.len())));
    }
    let n = a.len();
    if n <= max_lag + 2 {
        return Err(Error::Data(format!("series of length {n} too short for lag {max_lag}")));
    }
    let (da, db) = (detrend(a), detrend(b));
    let (sa, sb) = (da.iter().map(|v| v * v).sum::<f64>(), db.iter().map(|v| v * v).sum::<f64>());
    let defined = sa > 0.0 && sb > 0.0;
    let denom = (sa * sb).sqrt();
    let lags = (0..=max_lag)
        .map(|k| defined.then(|| (0..n - k).map(|t| da[t] * db[t + k]).sum::<f64>() / denom))
        .collect();
    Ok(Xcf { lags, threshold: 1.96 / (n as f64).sqrt() })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScatterBin {
    /// Bin index `floor(o / width)`.
    pub bin: usize,
    pub lower: f64,
    pub upper: f64,
    pub count: usize,
    pub mean: f64,
    pub std: f64,
    /// Mean and standard deviation of `ln(1 + prediction)`.
    pub log_mean: f64,
    pub log_std: f64,
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    (m, (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n).sqrt())
}

/// Prediction statistics per observation bin of width `bin_width`; empty
/// bins are omitted.
pub fn scatter_stats(predictions: &[f64], observations: &[f64], bin_width: f64) -> Result<Vec<ScatterBin>> {
    if predictions.is_empty() || predictions.len() != observations.len() {
        return Err(Error::Data("scatter statistics need equal, non-empty inputs".into()));
    }
    if !(bin_width > 0.0) || observations.iter().any(|&o| !(o >= 0.0 && o.is_finite())) {
        return Err(Error::Data("bin width must be positive and observations non-negative".into()));
    }
    let mut bins: std::collections::BTreeMap<usize, Vec<f64>> = Default::default();
    for (&p, &o) in predictions.iter().zip(observations) {
        bins.entry((o / bin_width).floor() as usize).or_default().push(p);
    }
    Ok(bins
        .into_iter()
        .map(|(bin, preds)| {
            let (mean, std) = mean_std(&preds);
            let logs: Vec<f64> = preds.iter().map(|p| p.ln_1p()).collect();
            let (log_mean, log_std) = mean_std(&logs);
            ScatterBin {
                bin,
                lower: bin as f64 * bin_width,
                upper: (bin + 1) as f64 * bin_width,
                count: preds.len(),
                mean,
                std,
                log_mean,
                log_std,
            }
        })
        .collect())
}

pub fn scatter_table(bins: &[ScatterBin]) -> String {
    let mut s = format!(
        "{:>8}{:>8}{:>8}{:>12}{:>12}{:>12}{:>12}\n",
        "lower", "upper", "count", "mean", "std", "log1p_mean", "log1p_std"
    );
    for b in bins {
        let _ = writeln!(
            s,
            "{:>8.1}{:>8.1}{:>8}{:>12.4}{:>12.4}{:>12.4}{:>12.4}",
            b.lower, b.upper, b.count, b.mean, b.std, b.log_mean, b.log_std
        );
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_inputs_give_zero_report() {
        let o = [0.0, 3.0, 11.0, 0.5];
        let r = evaluate(&o, &o, &[Season::Djf; 4]).unwrap();
        assert_eq!((r.all.rmse, r.all.mae, r.all.me, r.all.r10_rmse), (0.0, 0.0, 0.0, Some(0.0)));
        assert_eq!(r.seasons.len(), 1);
    }

    #[test]
    fn constant_offset_is_mean_error() {
        let o = [0.0, 2.0, 4.0, 9.0];
        let p: Vec<f64> = o.iter().map(|v| v + 0.75).collect();
        let r = evaluate(&p, &o, &[Season::Jja; 4]).unwrap();
        assert_eq!(r.all.me, 0.75);
        assert_eq!(r.all.r10_rmse, None);
        assert!(r.to_table().contains("undefined"));
    }

    #[test]
    fn r10_is_strict() {
        let r = evaluate(&[12.0, 0.0], &[10.0, 10.0 + 1e-9], &[Season::Son; 2]).unwrap();
        assert_eq!(r.all.r10_count, 1);
    }

    #[test]
    fn season_buckets_split_cells() {
        let p = [1.0, 2.0, 3.0];
        let o = [0.0, 0.0, 0.0];
        let r = evaluate(&p, &o, &[Season::Djf, Season::Mam, Season::Mam]).unwrap();
        assert_eq!(r.seasons.len(), 2);
        assert_eq!(r.seasons[1].0, Season::Mam);
        assert_eq!(r.seasons[1].1.me, 2.5);
        assert_eq!(r.to_manifest().get_str("MAM.count"), Some("2"));
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(evaluate(&[1.0], &[1.0, 2.0], &[Season::Djf]).is_err());
        assert!(evaluate(&[1.0], &[-1.0], &[Season::Djf]).is_err());
        assert!(evaluate(&[], &[], &[]).is_err());
    }

    #[test]
    fn xcf_signs_and_degenerate() {
        let x: Vec<f64> = (0..50).map(|i| ((i * 7919) % 31) as f64 + 0.1 * i as f64).collect();
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        assert_eq!(xcf(&x, &x, 5).unwrap().lags[0], Some(1.0));
        assert!((xcf(&x, &neg, 5).unwrap().lags[0].unwrap() + 1.0).abs() < 1e-15);
        let line: Vec<f64> = (0..50).map(|i| 2.0 * i as f64 + 1.0).collect();
        assert!(xcf(&x, &line, 5).unwrap().lags.iter().all(Option::is_none));
        assert!(xcf(&x[..6], &x[..6], 4).is_err());
    }

    #[test]
    fn xcf_detects_shift() {
        let base: Vec<f64> = (0..400).map(|i| ((i * 2654435761u64 as usize) % 1000) as f64).collect();
        let b: Vec<f64> = (0..400).map(|i| if i >= 3 { base[i - 3] } else { 0.0 }).collect();
        let r = xcf(&base, &b, 6).unwrap();
        let best = (0..=6).max_by(|&i, &j| r.lags[i].unwrap().total_cmp(&r.lags[j].unwrap())).unwrap();
        assert_eq!(best, 3);
    }

    #[test]
    fn scatter_single_bin_and_log_column() {
        let bins = scatter_stats(&[0.0, 0.0], &[1.0, 2.5], 3.0).unwrap();
        assert_eq!(bins.len(), 1);
        assert_eq!((bins[0].log_mean, bins[0].count), (0.0, 2));
        let bins = scatter_stats(&[1.0, 2.0, 5.0], &[0.0, 3.0, 3.5], 3.0).unwrap();
        assert_eq!(bins.iter().map(|b| b.bin).collect::<Vec<_>>(), [0, 1]);
        assert_eq!((bins[1].mean, bins[1].std), (3.5, 1.5));
        assert!(scatter_table(&bins).lines().count() == 3);
    }
}
