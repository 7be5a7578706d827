//! Interval and distribution metrics with block-bootstrap bands.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::conformal::PredictionInterval;
use crate::models::{pinball_loss, QuantileLevel, QuantileSetForecast};
use crate::{serde_inf, stats};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("empty input")]
    Empty,
    #[error("CRPS needs at least 3 levels, got {0}")]
    TooFewLevels(usize),
    #[error("forecast quantiles decrease with level")]
    NonMonotone,
    #[error("block length {block_len} exceeds series length {len}")]
    BlockTooLong { block_len: usize, len: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// Share of targets inside their (inclusive) interval.
pub fn empirical_coverage(intervals: &[PredictionInterval], y: &[f64]) -> Result<f64, EvalError> {
    if intervals.len() != y.len() {
        return Err(EvalError::LengthMismatch {
            left: intervals.len(),
            right: y.len(),
        });
    }
    if y.is_empty() {
        return Err(EvalError::Empty);
    }
    let hits = intervals.iter().zip(y).filter(|(i, y)| i.contains(**y)).count();
    Ok(hits as f64 / y.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WidthSummary {
    /// `+inf` as soon as one interval is unbounded.
    #[serde(with = "serde_inf")]
    pub mean: f64,
    /// Mean over the bounded intervals only; `None` if there are none.
    #[serde(with = "serde_inf::option")]
    pub finite_mean: Option<f64>,
    pub n_infinite: usize,
}

impl WidthSummary {
    pub fn has_infinite(&self) -> bool {
        self.n_infinite > 0
    }
}

pub fn average_width(intervals: &[PredictionInterval]) -> Result<WidthSummary, EvalError> {
    if intervals.is_empty() {
        return Err(EvalError::Empty);
    }
    let finite: Vec<f64> = intervals
        .iter()
        .filter(|i| i.is_finite())
        .map(PredictionInterval::width)
        .collect();
    let n_infinite = intervals.len() - finite.len();
    let finite_mean = stats::mean(&finite);
    Ok(WidthSummary {
        mean: if n_infinite > 0 {
            f64::INFINITY
        } else {
            finite_mean.expect("non-empty")
        },
        finite_mean,
        n_infinite,
    })
}

/// Per-step pinball losses of quantile forecasts `q` at `level`.
pub fn pinball_series(y: &[f64], q: &[f64], level: QuantileLevel) -> Result<Vec<f64>, EvalError> {
    if y.len() != q.len() {
        return Err(EvalError::LengthMismatch {
            left: y.len(),
            right: q.len(),
        });
    }
    Ok(y.iter().zip(q).map(|(y, q)| pinball_loss(*y, *q, level)).collect())
}

/// Levels 0.01, 0.02, ..., 0.99.
pub fn default_crps_levels() -> Vec<QuantileLevel> {
    (1..=99)
        .map(|i| QuantileLevel::new(i as f64 / 100.0).expect("in (0, 1)"))
        .collect()
}

/// Twice the grid mean of the pinball losses, so that a point forecast `q`
/// scores `|y - q|` in the fine-grid limit.
pub fn crps_riemann(forecast: &QuantileSetForecast, y: f64) -> Result<f64, EvalError> {
    let n = forecast.levels.len();
    if n < 3 {
        return Err(EvalError::TooFewLevels(n));
    }
    if !forecast.is_monotone() {
        return Err(EvalError::NonMonotone);
    }
    let total: f64 = forecast
        .levels
        .iter()
        .zip(&forecast.values)
        .map(|(l, q)| pinball_loss(y, *q, *l))
        .sum();
    Ok(2.0 * total / n as f64)
}

/// Per-step metric values with their labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSeries {
    pub method: String,
    pub hour: u8,
    pub level: f64,
    pub period: String,
    pub metric: String,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapCI {
    #[serde(with = "serde_inf")]
    pub point: f64,
    #[serde(with = "serde_inf")]
    pub lo: f64,
    #[serde(with = "serde_inf")]
    pub hi: f64,
    pub n_boot: usize,
    pub block_len: usize,
}

impl MetricSeries {
    pub fn bootstrap(&self, block_len: usize, n_boot: usize, seed: u64) -> Result<BootstrapCI, EvalError> {
        block_bootstrap_ci(&self.values, block_len, n_boot, (0.05, 0.95), seed)
    }
}

/// Non-overlapping moving block bootstrap of the mean.
///
/// The series is cut into consecutive blocks of `block_len` (the last one may
/// be shorter); each resample draws blocks with replacement until it reaches
/// the original length, truncating the final block. Resample `b` uses its own
/// ChaCha stream of `seed`, so the result does not depend on thread count.
pub fn block_bootstrap_ci(
    values: &[f64],
    block_len: usize,
    n_boot: usize,
    quantiles: (f64, f64),
    seed: u64,
) -> Result<BootstrapCI, EvalError> {
    let n = values.len();
    if n == 0 {
        return Err(EvalError::Empty);
    }
    if block_len == 0 || n_boot == 0 {
        return Err(EvalError::InvalidArgument("block_len and n_boot must be positive".into()));
    }
    if block_len > n {
        return Err(EvalError::BlockTooLong { block_len, len: n });
    }
    let (qa, qb) = quantiles;
    if !((0.0..=1.0).contains(&qa) && (0.0..=1.0).contains(&qb) && qa <= qb) {
        return Err(EvalError::InvalidArgument(format!("bad quantiles {quantiles:?}")));
    }
    let blocks: Vec<&[f64]> = values.chunks(block_len).collect();
    let point = stats::mean(values).expect("non-empty");
    let means: Vec<f64> = (0..n_boot)
        .into_par_iter()
        .map(|b| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(b as u64);
            let mut picked = Vec::with_capacity(blocks.len());
            let mut taken = 0usize;
            while taken < n {
                let block = blocks[rng.random_range(0..blocks.len())];
                let k = block.len().min(n - taken);
                picked.push(&block[..k]);
                taken += k;
            }
            stats::mean_iter(picked.into_iter().flatten().copied()).expect("non-empty")
        })
        .collect();
    let sorted = stats::sorted(&means);
    Ok(BootstrapCI {
        point,
        lo: stats::interpolated_quantile_sorted(&sorted, qa).expect("non-empty"),
        hi: stats::interpolated_quantile_sorted(&sorted, qb).expect("non-empty"),
        n_boot,
        block_len,
    })
}

/// One line of the tidy metrics table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub method: String,
    pub hour: u8,
    pub level: f64,
    pub period: String,
    pub metric: String,
    pub value: f64,
    pub ci_lo: Option<f64>,
    pub ci_hi: Option<f64>,
}

pub fn write_tidy_csv(records: &[MetricRecord], path: &Path) -> Result<(), EvalError> {
    let mut w = csv::Writer::from_path(path)?;
    for r in records {
        w.serialize(r)?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn read_tidy_csv(path: &Path) -> Result<Vec<MetricRecord>, EvalError> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().collect::<Result<Vec<_>, _>>().map_err(Into::into)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn iv(lo: f64, hi: f64) -> PredictionInterval {
        PredictionInterval::new(lo, hi, 0.9).unwrap()
    }

    fn lv(b: f64) -> QuantileLevel {
        QuantileLevel::new(b).unwrap()
    }

    #[test]
    fn coverage_examples() {
        let i = vec![iv(0.0, 1.0); 3];
        let c = empirical_coverage(&i, &[0.5, 2.0, 0.5]).unwrap();
        assert!((c - 2.0 / 3.0).abs() < 1e-15);
        let all = vec![PredictionInterval::unbounded(0.9); 4];
        assert_eq!(empirical_coverage(&all, &[1e9, -1e9, 0.0, 5.0]).unwrap(), 1.0);
        assert_eq!(empirical_coverage(&[iv(0.0, 1.0)], &[1.0]).unwrap(), 1.0);
        assert!(empirical_coverage(&[iv(0.0, 1.0)], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn width_examples() {
        assert_eq!(average_width(&[iv(0.0, 2.0), iv(1.0, 5.0)]).unwrap().mean, 3.0);
        let w = average_width(&[iv(0.0, 2.0), PredictionInterval::unbounded(0.9), iv(0.0, 4.0)]).unwrap();
        assert_eq!(w.mean, f64::INFINITY);
        assert_eq!(w.finite_mean, Some(3.0));
        assert!(w.has_infinite());
        assert_eq!(average_width(&[iv(2.0, 2.0), iv(3.0, 3.0)]).unwrap().mean, 0.0);
        let all = average_width(&[PredictionInterval::unbounded(0.9)]).unwrap();
        assert_eq!((all.mean, all.finite_mean), (f64::INFINITY, None));
    }

    fn grid_forecast(step: usize, f: impl Fn(f64) -> f64) -> QuantileSetForecast {
        let n = 1000 / step;
        let levels: Vec<QuantileLevel> = (1..n).map(|i| lv(i as f64 * step as f64 / 1000.0)).collect();
        let values = levels.iter().map(|l| f(l.value())).collect();
        QuantileSetForecast::new(levels, values).unwrap()
    }

    #[test]
    fn crps_oracles() {
        let levels = default_crps_levels();
        let constant = QuantileSetForecast::new(levels.clone(), vec![3.0; 99]).unwrap();
        assert!((crps_riemann(&constant, 5.0).unwrap() - 2.0).abs() < 0.03);
        let values = levels.iter().map(|l| l.value()).collect();
        let uniform = QuantileSetForecast::new(levels.clone(), values).unwrap();
        assert!((crps_riemann(&uniform, 0.0).unwrap() - 1.0 / 3.0).abs() < 0.01);
        let perfect = QuantileSetForecast::new(levels.clone(), vec![1.25; 99]).unwrap();
        assert_eq!(crps_riemann(&perfect, 1.25).unwrap(), 0.0);
        let bad = QuantileSetForecast::new(levels[..3].to_vec(), vec![3.0, 1.0, 2.0]).unwrap();
        assert!(matches!(crps_riemann(&bad, 0.0), Err(EvalError::NonMonotone)));
        let short = QuantileSetForecast::new(levels[..2].to_vec(), vec![1.0, 2.0]).unwrap();
        assert!(matches!(crps_riemann(&short, 0.0), Err(EvalError::TooFewLevels(2))));
    }

    #[test]
    fn crps_error_shrinks_with_spacing() {
        let exact = 1.0 / 3.0;
        let e = |step| (crps_riemann(&grid_forecast(step, |a| a), 0.0).unwrap() - exact).abs();
        let (coarse, fine) = (e(20), e(10));
        assert!(fine <= 0.6 * coarse, "{coarse} {fine}");
    }

    #[test]
    fn bootstrap_degenerate_cases() {
        let c = block_bootstrap_ci(&[0.7; 50], 7, 100, (0.05, 0.95), 1).unwrap();
        assert_eq!((c.lo, c.hi), (c.point, c.point));
        let v: Vec<f64> = (0..40).map(|i| i as f64).collect();
        let one = block_bootstrap_ci(&v, 40, 50, (0.05, 0.95), 2).unwrap();
        assert_eq!((one.lo, one.hi), (one.point, one.point));
        assert!(matches!(
            block_bootstrap_ci(&v, 41, 5, (0.05, 0.95), 0),
            Err(EvalError::BlockTooLong { .. })
        ));
    }

    #[test]
    fn bootstrap_is_seeded_and_centered() {
        let v: Vec<f64> = (0..300).map(|i| ((i * 37) % 11) as f64).collect();
        let a = block_bootstrap_ci(&v, 30, 200, (0.05, 0.95), 9).unwrap();
        let b = block_bootstrap_ci(&v, 30, 200, (0.05, 0.95), 9).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.point, stats::mean(&v).unwrap());
        assert!(a.lo <= a.point && a.point <= a.hi);
        let inf = block_bootstrap_ci(&[1.0, f64::INFINITY, 2.0], 1, 20, (0.05, 0.95), 0).unwrap();
        assert_eq!(inf.point, f64::INFINITY);
    }

    #[test]
    fn tidy_csv_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.csv");
        let rows = vec![
            MetricRecord {
                method: "osscp".into(),
                hour: 8,
                level: 0.9,
                period: "post".into(),
                metric: "width".into(),
                value: f64::INFINITY,
                ci_lo: None,
                ci_hi: None,
            },
            MetricRecord {
                method: "aci".into(),
                hour: 3,
                level: 0.8,
                period: "all".into(),
                metric: "coverage".into(),
                value: 0.81,
                ci_lo: Some(0.78),
                ci_hi: Some(0.84),
            },
        ];
        write_tidy_csv(&rows, &p).unwrap();
        assert_eq!(read_tidy_csv(&p).unwrap(), rows);
    }
}
