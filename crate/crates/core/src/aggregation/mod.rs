//! Online aggregation of expert forecasts under pinball loss.

mod online;
mod range;
mod rules;

pub use online::{
    online_aggregate, AggregationTrace, IntervalAggregator, LossSpec, OnlineAggregator,
};
pub use range::RunningRange;
pub use rules::{AggregationRule, Boa, Ewa, Rule, RuleKind, UniformRule};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::protocol::ProtocolViolation;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AggregationError {
    #[error("clip bound [{lo}, {hi}] must be finite with lo < hi")]
    InvalidBound { lo: f64, hi: f64 },
    #[error("expert {expert} reported a non-finite loss {loss}")]
    NonFiniteLoss { expert: usize, loss: f64 },
    #[error("expert {expert} has no prediction at step {step}")]
    MissingExpert { expert: usize, step: usize },
    #[error("expected {expected} experts, got {got}")]
    ExpertCount { expected: usize, got: usize },
    #[error("no experts")]
    NoExperts,
    #[error("invalid weight vector: {0}")]
    InvalidWeights(String),
    #[error("invalid aggregation setting: {0}")]
    Config(String),
    #[error("protocol violation: {0}")]
    Protocol(ProtocolViolation),
}

/// Closed interval used to threshold expert predictions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClipBound {
    pub lo: f64,
    pub hi: f64,
}

impl ClipBound {
    pub fn new(lo: f64, hi: f64) -> Result<Self, AggregationError> {
        if lo.is_finite() && hi.is_finite() && lo < hi {
            Ok(Self { lo, hi })
        } else {
            Err(AggregationError::InvalidBound { lo, hi })
        }
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn clamp(&self, v: f64) -> f64 {
        v.clamp(self.lo, self.hi)
    }
}

/// Clamps every prediction into `[lo, hi]`; infinities land on the matching end.
pub fn clip_experts(preds: &[f64], bound: (f64, f64)) -> Result<Vec<f64>, AggregationError> {
    let b = ClipBound::new(bound.0, bound.1)?;
    Ok(preds.iter().map(|&p| b.clamp(p)).collect())
}

/// Linearized pinball losses `g * f_k` with `g = 1{y <= agg} - beta`.
pub fn gradient_trick_loss(expert_preds: &[f64], agg_pred: f64, y: f64, beta: f64) -> Vec<f64> {
    let g = if y <= agg_pred { 1.0 - beta } else { -beta };
    expert_preds.iter().map(|f| g * f).collect()
}

/// A probability vector over experts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightVector(Vec<f64>);

impl WeightVector {
    pub const SUM_TOLERANCE: f64 = 1e-12;

    pub fn uniform(k: usize) -> Result<Self, AggregationError> {
        if k == 0 {
            return Err(AggregationError::NoExperts);
        }
        Ok(Self(vec![1.0 / k as f64; k]))
    }

    pub fn new(weights: Vec<f64>) -> Result<Self, AggregationError> {
        if weights.is_empty() {
            return Err(AggregationError::NoExperts);
        }
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(AggregationError::InvalidWeights(format!("{weights:?}")));
        }
        let s: f64 = weights.iter().sum();
        if (s - 1.0).abs() > Self::SUM_TOLERANCE {
            return Err(AggregationError::InvalidWeights(format!("sum is {s}")));
        }
        Ok(Self(weights))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Convex combination of `preds`, kept inside their range.
    pub fn combine(&self, preds: &[f64]) -> f64 {
        let agg: f64 = self.0.iter().zip(preds).map(|(w, f)| w * f).sum();
        let (lo, hi) = preds
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &p| (a.min(p), b.max(p)));
        agg.clamp(lo, hi)
    }
}

/// Expert predictions for one level or bound, one row per step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpertPanel {
    pub expert_ids: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl ExpertPanel {
    /// NaN marks a missing prediction and is rejected.
    pub fn new(expert_ids: Vec<String>, rows: Vec<Vec<f64>>) -> Result<Self, AggregationError> {
        if expert_ids.is_empty() {
            return Err(AggregationError::NoExperts);
        }
        for (step, row) in rows.iter().enumerate() {
            if row.len() != expert_ids.len() {
                return Err(AggregationError::ExpertCount {
                    expected: expert_ids.len(),
                    got: row.len(),
                });
            }
            if let Some(expert) = row.iter().position(|v| v.is_nan()) {
                return Err(AggregationError::MissingExpert { expert, step });
            }
        }
        Ok(Self { expert_ids, rows })
    }

    pub fn n_experts(&self) -> usize {
        self.expert_ids.len()
    }

    pub fn n_steps(&self) -> usize {
        self.rows.len()
    }
}
