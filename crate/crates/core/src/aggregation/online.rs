use serde::{Deserialize, Serialize};

use super::rules::{AggregationRule, Rule, RuleKind};
use super::{gradient_trick_loss, AggregationError, ClipBound, ExpertPanel, RunningRange};
use crate::models::{pinball_loss, QuantileLevel};
use crate::protocol::ProtocolViolation;

/// Loss the experts are scored with.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossSpec {
    pub level: QuantileLevel,
    pub gradient_trick: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Pending {
    clipped: Vec<f64>,
    aggregate: f64,
    loss_bound: f64,
}

/// Streaming aggregation for a single quantile level or interval bound.
///
/// Weights used at step `t` depend only on truths observed before `t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OnlineAggregator {
    spec: LossSpec,
    rule: Rule,
    pending: Option<Pending>,
    steps: usize,
    record_history: bool,
    history: Vec<Vec<f64>>,
}

impl OnlineAggregator {
    pub fn new(n_experts: usize, spec: LossSpec, rule: &RuleKind) -> Result<Self, AggregationError> {
        Ok(Self {
            spec,
            rule: rule.build(n_experts)?,
            pending: None,
            steps: 0,
            record_history: false,
            history: Vec::new(),
        })
    }

    /// Keep the weight vector used at every step.
    pub fn with_history(mut self) -> Self {
        self.record_history = true;
        self
    }

    pub fn n_experts(&self) -> usize {
        self.rule.weights().len()
    }

    pub fn weights(&self) -> &[f64] {
        self.rule.weights().as_slice()
    }

    pub fn history(&self) -> &[Vec<f64>] {
        &self.history
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn spec(&self) -> &LossSpec {
        &self.spec
    }

    /// Clips `preds` into `bound` and returns their weighted mean.
    pub fn issue(&mut self, preds: &[f64], bound: ClipBound) -> Result<f64, AggregationError> {
        if self.pending.is_some() {
            return Err(AggregationError::Protocol(ProtocolViolation::IssueWhilePending));
        }
        let k = self.n_experts();
        if preds.len() != k {
            return Err(AggregationError::ExpertCount {
                expected: k,
                got: preds.len(),
            });
        }
        if let Some(expert) = preds.iter().position(|p| p.is_nan()) {
            return Err(AggregationError::MissingExpert {
                expert,
                step: self.steps,
            });
        }
        let clipped: Vec<f64> = preds.iter().map(|&p| bound.clamp(p)).collect();
        let aggregate = self.rule.weights().combine(&clipped);
        if self.record_history {
            self.history.push(self.weights().to_vec());
        }
        let beta = self.spec.level.value();
        self.pending = Some(Pending {
            clipped,
            aggregate,
            loss_bound: beta.max(1.0 - beta) * bound.width(),
        });
        Ok(aggregate)
    }

    pub fn observe(&mut self, y: f64) -> Result<(), AggregationError> {
        let Some(p) = self.pending.take() else {
            return Err(AggregationError::Protocol(ProtocolViolation::ObserveBeforeIssue));
        };
        let beta = self.spec.level.value();
        let losses = if self.spec.gradient_trick {
            gradient_trick_loss(&p.clipped, p.aggregate, y, beta)
        } else {
            p.clipped
                .iter()
                .map(|f| pinball_loss(y, *f, self.spec.level))
                .collect()
        };
        self.rule.update(&losses, p.loss_bound)?;
        self.steps += 1;
        Ok(())
    }
}

/// Output of a batch aggregation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregationTrace {
    pub predictions: Vec<f64>,
    /// Weights in force at each step, before that step's truth.
    pub weights: Vec<Vec<f64>>,
}

/// Runs an [`OnlineAggregator`] over a whole panel with a fixed clip bound.
pub fn online_aggregate(
    panel: &ExpertPanel,
    truth: &[f64],
    spec: LossSpec,
    rule: &RuleKind,
    bound: ClipBound,
) -> Result<AggregationTrace, AggregationError> {
    if truth.len() != panel.n_steps() {
        return Err(AggregationError::Config(format!(
            "{} truths for {} steps",
            truth.len(),
            panel.n_steps()
        )));
    }
    let mut agg = OnlineAggregator::new(panel.n_experts(), spec, rule)?.with_history();
    let mut predictions = Vec::with_capacity(truth.len());
    for (row, y) in panel.rows.iter().zip(truth) {
        predictions.push(agg.issue(row, bound)?);
        agg.observe(*y)?;
    }
    Ok(AggregationTrace {
        predictions,
        weights: agg.history,
    })
}

/// Aggregates interval experts bound by bound: the lower bounds under pinball
/// loss at `alpha/2`, the upper bounds at `1 - alpha/2`, each clipped to the
/// running target range. A crossed result is swapped.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntervalAggregator {
    lower: OnlineAggregator,
    upper: OnlineAggregator,
    range: RunningRange,
    bound: Option<ClipBound>,
}

impl IntervalAggregator {
    pub fn new(
        n_experts: usize,
        alpha: f64,
        rule: &RuleKind,
        gradient_trick: bool,
        observed: &[f64],
    ) -> Result<Self, AggregationError> {
        let level = |b: f64| {
            QuantileLevel::new(b).map_err(|_| AggregationError::Config(format!("alpha {alpha} out of (0, 1)")))
        };
        let lower = OnlineAggregator::new(
            n_experts,
            LossSpec {
                level: level(alpha / 2.0)?,
                gradient_trick,
            },
            rule,
        )?;
        let upper = OnlineAggregator::new(
            n_experts,
            LossSpec {
                level: level(1.0 - alpha / 2.0)?,
                gradient_trick,
            },
            rule,
        )?;
        Ok(Self {
            lower,
            upper,
            range: RunningRange::new(observed),
            bound: None,
        })
    }

    pub fn with_history(mut self) -> Self {
        self.lower = self.lower.with_history();
        self.upper = self.upper.with_history();
        self
    }

    pub fn lower(&self) -> &OnlineAggregator {
        &self.lower
    }

    pub fn upper(&self) -> &OnlineAggregator {
        &self.upper
    }

    /// Clip bound used by the most recent `issue`.
    pub fn last_bound(&self) -> Option<ClipBound> {
        self.bound
    }

    pub fn current_bound(&self) -> Result<ClipBound, AggregationError> {
        self.range.bound()
    }

    pub fn issue(&mut self, lowers: &[f64], uppers: &[f64]) -> Result<(f64, f64), AggregationError> {
        let bound = self.range.bound()?;
        let lo = self.lower.issue(lowers, bound)?;
        let hi = match self.upper.issue(uppers, bound) {
            Ok(v) => v,
            Err(e) => {
                self.lower.pending = None;
                return Err(e);
            }
        };
        self.bound = Some(bound);
        Ok(if lo <= hi { (lo, hi) } else { (hi, lo) })
    }

    pub fn observe(&mut self, y: f64) -> Result<(), AggregationError> {
        self.lower.observe(y)?;
        self.upper.observe(y)?;
        self.range.push(y);
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn spec(beta: f64, gradient_trick: bool) -> LossSpec {
        LossSpec {
            level: QuantileLevel::new(beta).unwrap(),
            gradient_trick,
        }
    }

    fn bound() -> ClipBound {
        ClipBound::new(-100.0, 100.0).unwrap()
    }

    #[test]
    fn identical_experts_pass_through() {
        let mut a = OnlineAggregator::new(3, spec(0.3, true), &RuleKind::Boa).unwrap();
        for t in 0..100 {
            let v = (t as f64 * 0.37).sin() * 10.0;
            assert_eq!(a.issue(&[v, v, v], bound()).unwrap(), v);
            a.observe(v + 1.0).unwrap();
            assert_eq!(a.weights(), &[1.0 / 3.0; 3]);
        }
    }

    #[test]
    fn aggregate_stays_within_clipped_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut a = OnlineAggregator::new(4, spec(0.9, true), &RuleKind::Boa).unwrap();
        let b = ClipBound::new(-5.0, 5.0).unwrap();
        for _ in 0..500 {
            let preds: Vec<f64> = (0..4).map(|_| rng.random_range(-8.0..8.0)).collect();
            let agg = a.issue(&preds, b).unwrap();
            let c: Vec<f64> = preds.iter().map(|p| b.clamp(*p)).collect();
            let lo = c.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = c.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            assert!(lo <= agg && agg <= hi);
            a.observe(rng.random_range(-6.0..6.0)).unwrap();
        }
    }

    #[test]
    fn single_expert_without_gradient_trick_has_its_loss() {
        let mut a = OnlineAggregator::new(1, spec(0.2, false), &RuleKind::Boa).unwrap();
        for (p, y) in [(1.0, 3.0), (4.0, -2.0), (0.5, 0.5)] {
            let agg = a.issue(&[p], bound()).unwrap();
            let l = QuantileLevel::new(0.2).unwrap();
            assert_eq!(pinball_loss(y, agg, l), pinball_loss(y, p, l));
            a.observe(y).unwrap();
        }
    }

    #[test]
    fn protocol_is_enforced() {
        let mut a = OnlineAggregator::new(2, spec(0.5, true), &RuleKind::Boa).unwrap();
        assert!(matches!(a.observe(1.0), Err(AggregationError::Protocol(_))));
        a.issue(&[0.0, 1.0], bound()).unwrap();
        assert!(matches!(a.issue(&[0.0, 1.0], bound()), Err(AggregationError::Protocol(_))));
        a.observe(0.0).unwrap();
        assert!(matches!(
            a.issue(&[0.0, f64::NAN], bound()),
            Err(AggregationError::MissingExpert { expert: 1, step: 1 })
        ));
    }

    #[test]
    fn truncated_replay_reproduces_weights() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let rows: Vec<Vec<f64>> = (0..200)
            .map(|_| (0..3).map(|_| rng.random_range(-3.0..3.0)).collect())
            .collect();
        let truth: Vec<f64> = (0..200).map(|_| rng.random_range(-3.0..3.0)).collect();
        let ids = vec!["a".into(), "b".into(), "c".into()];
        let full = online_aggregate(
            &ExpertPanel::new(ids.clone(), rows.clone()).unwrap(),
            &truth,
            spec(0.5, true),
            &RuleKind::Boa,
            bound(),
        )
        .unwrap();
        let mut tampered = truth.clone();
        tampered[120..].iter_mut().for_each(|v| *v = 99.0);
        let part = online_aggregate(
            &ExpertPanel::new(ids, rows).unwrap(),
            &tampered,
            spec(0.5, true),
            &RuleKind::Boa,
            bound(),
        )
        .unwrap();
        // weights at step t use truths before t only
        assert_eq!(full.weights[..121], part.weights[..121]);
        assert_eq!(full.predictions[..121], part.predictions[..121]);
        assert_ne!(full.weights[150], part.weights[150]);
    }

    #[test]
    fn interval_aggregation_swaps_crossed_bounds() {
        let mut ia = IntervalAggregator::new(2, 0.2, &RuleKind::Uniform, true, &[0.0, 10.0]).unwrap();
        let (lo, hi) = ia.issue(&[6.0, 6.0], &[4.0, 4.0]).unwrap();
        assert_eq!((lo, hi), (4.0, 6.0));
        ia.observe(5.0).unwrap();
        let (lo, hi) = ia.issue(&[f64::NEG_INFINITY, 1.0], &[3.0, f64::INFINITY]).unwrap();
        let b = ia.last_bound().unwrap();
        assert_eq!(b, ClipBound::new(-5.0, 15.0).unwrap());
        assert_eq!((lo, hi), ((-5.0 + 1.0) / 2.0, (3.0 + 15.0) / 2.0));
    }
}
