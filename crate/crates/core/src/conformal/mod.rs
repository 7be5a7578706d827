//! Conformity scores, the corrected empirical quantile, and the online
//! conformal wrappers.

mod methods;
mod scores;
mod source;

pub use methods::{
    aci_update, default_gamma_grid, interval_at_level, Aci, AgAci, ConformalMethod, MethodState,
    RawQuantile, SplitConformal, StaticSplitConformal, STATE_VERSION,
};
pub use scores::ScoreWindow;
pub use source::{CalibrationSource, HorizonSource, OsscpSource, SourceSpec};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::aggregation::AggregationError;
use crate::dataset::DatasetError;
use crate::models::ModelError;
use crate::protocol::ProtocolViolation;
use crate::serde_inf;

#[derive(Debug, Error)]
pub enum ConformalError {
    #[error("score window is empty")]
    EmptyScores,
    #[error("alpha must lie in (0, 1), got {0}")]
    InvalidAlpha(f64),
    #[error("crossed quantiles: lower {lo} > upper {hi}")]
    CrossedQuantiles { lo: f64, hi: f64 },
    #[error("invalid interval [{lower}, {upper}]")]
    InvalidInterval { lower: f64, upper: f64 },
    #[error("protocol violation: {0}")]
    Protocol(ProtocolViolation),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("need {required} past observations, have {available}")]
    InsufficientHistory { required: usize, available: usize },
    #[error("unsupported state version {0}")]
    Version(u32),
    #[error("state document: {0}")]
    Document(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Aggregation(#[from] AggregationError),
}

/// A closed prediction interval; either bound may be infinite.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredictionInterval {
    #[serde(with = "serde_inf")]
    pub lower: f64,
    #[serde(with = "serde_inf")]
    pub upper: f64,
    /// Target coverage `1 - alpha`.
    pub level: f64,
}

impl PredictionInterval {
    pub fn new(lower: f64, upper: f64, level: f64) -> Result<Self, ConformalError> {
        if lower.is_nan() || upper.is_nan() || lower > upper || lower == f64::INFINITY || upper == f64::NEG_INFINITY {
            return Err(ConformalError::InvalidInterval { lower, upper });
        }
        Ok(Self { lower, upper, level })
    }

    pub fn unbounded(level: f64) -> Self {
        Self {
            lower: f64::NEG_INFINITY,
            upper: f64::INFINITY,
            level,
        }
    }

    /// Inclusive on both ends.
    pub fn contains(&self, y: f64) -> bool {
        self.lower <= y && y <= self.upper
    }

    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }

    pub fn is_finite(&self) -> bool {
        self.lower.is_finite() && self.upper.is_finite()
    }
}

/// `max(q_lo - y, y - q_hi)`: negative strictly inside, zero on a bound.
pub fn cqr_score(y: f64, q_lo: f64, q_hi: f64) -> Result<f64, ConformalError> {
    if q_lo > q_hi {
        return Err(ConformalError::CrossedQuantiles { lo: q_lo, hi: q_hi });
    }
    Ok((q_lo - y).max(y - q_hi))
}

/// Rank `ceil((1 - alpha)(n + 1))`, 1-based; may exceed `n`.
pub(crate) fn corrected_rank(n: usize, alpha: f64) -> usize {
    let x = (1.0 - alpha) * (n as f64 + 1.0);
    // guard products such as 0.9 * 10 that round just above an integer
    let k = (x - 1e-9 * x.abs().max(1.0)).ceil();
    k.max(1.0) as usize
}

/// The `ceil((1 - alpha)(n + 1))`-th smallest score, or `+inf` past the end.
pub fn corrected_quantile_sorted(sorted: &[f64], alpha: f64) -> Result<f64, ConformalError> {
    if sorted.is_empty() {
        return Err(ConformalError::EmptyScores);
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(ConformalError::InvalidAlpha(alpha));
    }
    let k = corrected_rank(sorted.len(), alpha);
    Ok(if k > sorted.len() { f64::INFINITY } else { sorted[k - 1] })
}

pub fn corrected_quantile(scores: &ScoreWindow, alpha: f64) -> Result<f64, ConformalError> {
    corrected_quantile_sorted(scores.sorted(), alpha)
}

/// `[q_lo - q, q_hi + q]`. An infinite correction yields the whole line; a
/// negative correction that would cross the bounds collapses to the midpoint.
pub fn conformal_interval(q_lo: f64, q_hi: f64, correction: f64, level: f64) -> PredictionInterval {
    if correction == f64::INFINITY {
        return PredictionInterval::unbounded(level);
    }
    let (lower, upper) = (q_lo - correction, q_hi + correction);
    if lower > upper {
        let mid = 0.5 * (q_lo + q_hi);
        return PredictionInterval {
            lower: mid,
            upper: mid,
            level,
        };
    }
    PredictionInterval { lower, upper, level }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn score_examples() {
        assert_eq!(cqr_score(5.0, 3.0, 7.0).unwrap(), -2.0);
        assert_eq!(cqr_score(8.0, 3.0, 7.0).unwrap(), 1.0);
        assert_eq!(cqr_score(3.0, 3.0, 7.0).unwrap(), 0.0);
        assert!(cqr_score(3.0, 7.0, 3.0).is_err());
    }

    #[test]
    fn corrected_quantile_examples() {
        let s: Vec<f64> = (1..=10).map(f64::from).collect();
        assert_eq!(corrected_quantile_sorted(&s, 0.1).unwrap(), 10.0);
        assert_eq!(corrected_quantile_sorted(&s, 0.5).unwrap(), 6.0);
        assert_eq!(corrected_quantile_sorted(&[1.0, 2.0, 3.0], 0.1).unwrap(), f64::INFINITY);
        assert!(matches!(corrected_quantile_sorted(&[], 0.1), Err(ConformalError::EmptyScores)));
        assert!(corrected_quantile_sorted(&s, 0.0).is_err());
        assert!(corrected_quantile_sorted(&s, 1.0).is_err());
    }

    /// Exact rank for alpha = a / 1000 in integer arithmetic.
    fn oracle_rank(n: usize, a_per_mille: usize) -> usize {
        ((1000 - a_per_mille) * (n + 1)).div_ceil(1000)
    }

    #[test]
    fn matches_integer_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..1000 {
            let n = rng.random_range(1..400);
            let a = rng.random_range(1..1000);
            let scores: Vec<f64> = (0..n).map(|_| rng.random_range(-5.0..5.0)).collect();
            let s = crate::stats::sorted(&scores);
            let k = oracle_rank(n, a);
            let want = if k > n { f64::INFINITY } else { s[k - 1] };
            assert_eq!(corrected_quantile_sorted(&s, a as f64 / 1000.0).unwrap(), want, "n={n} a={a}");
        }
    }

    #[test]
    fn interval_examples() {
        let i = conformal_interval(3.0, 7.0, 1.0, 0.9);
        assert_eq!((i.lower, i.upper), (2.0, 8.0));
        let i = conformal_interval(3.0, 7.0, 0.0, 0.9);
        assert_eq!((i.lower, i.upper), (3.0, 7.0));
        let i = conformal_interval(3.0, 7.0, -2.5, 0.9);
        assert_eq!((i.lower, i.upper), (5.0, 5.0));
        let i = conformal_interval(3.0, 7.0, f64::INFINITY, 0.9);
        assert_eq!((i.lower, i.upper), (f64::NEG_INFINITY, f64::INFINITY));
        assert!(i.contains(1e300));
    }

    #[test]
    fn interval_json_keeps_infinities() {
        let i = PredictionInterval::unbounded(0.8);
        let s = serde_json::to_string(&i).unwrap();
        assert_eq!(s, r#"{"lower":"-inf","upper":"inf","level":0.8}"#);
        let back: PredictionInterval = serde_json::from_str(&s).unwrap();
        assert_eq!(back, i);
        assert!(PredictionInterval::new(2.0, 1.0, 0.9).is_err());
        assert!(PredictionInterval::new(f64::INFINITY, f64::INFINITY, 0.9).is_err());
    }

    proptest! {
        #[test]
        fn nonincreasing_in_alpha(
            scores in prop::collection::vec(-10.0f64..10.0, 1..80),
            a in 0.001f64..0.999,
            b in 0.001f64..0.999,
        ) {
            let s = crate::stats::sorted(&scores);
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(corrected_quantile_sorted(&s, lo).unwrap() >= corrected_quantile_sorted(&s, hi).unwrap());
        }

        #[test]
        fn score_sign_tracks_membership(y in -20.0f64..20.0, lo in -10.0f64..10.0, w in 0.0f64..10.0) {
            let s = cqr_score(y, lo, lo + w).unwrap();
            let inside = lo < y && y < lo + w;
            prop_assert_eq!(s < 0.0, inside);
        }

        #[test]
        fn intervals_are_ordered(lo in -10.0f64..10.0, w in 0.0f64..10.0, q in -20.0f64..20.0) {
            let i = conformal_interval(lo, lo + w, q, 0.9);
            prop_assert!(i.lower <= i.upper);
        }
    }
}
