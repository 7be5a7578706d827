//! Weighting rules. BOA is the production rule; EWA and the uniform average
//! exist as cross-checks and baselines.

use serde::{Deserialize, Serialize};

use super::{AggregationError, WeightVector};

/// Maps per-step expert losses to the next weight vector.
///
/// `loss_bound` is an a-priori bound on loss differences between experts; a
/// rule may use it to scale learning rates.
pub trait AggregationRule {
    fn weights(&self) -> &WeightVector;

    fn update(&mut self, losses: &[f64], loss_bound: f64) -> Result<(), AggregationError>;
}

fn check_losses(losses: &[f64], k: usize) -> Result<(), AggregationError> {
    if losses.len() != k {
        return Err(AggregationError::ExpertCount {
            expected: k,
            got: losses.len(),
        });
    }
    if let Some((expert, &loss)) = losses.iter().enumerate().find(|(_, l)| !l.is_finite()) {
        return Err(AggregationError::NonFiniteLoss { expert, loss });
    }
    Ok(())
}

/// Normalizes log-weights without overflow.
fn softmax(logw: &[f64]) -> Vec<f64> {
    let m = logw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut w: Vec<f64> = logw.iter().map(|l| (l - m).exp()).collect();
    let s: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= s);
    w
}

/// Bernstein online aggregation with per-expert adaptive learning rates.
///
/// With instantaneous regrets `r_k = <w, l> - l_k`, the rule keeps
/// `R_k += r_k - eta_k r_k^2`, `V_k += r_k^2`, and sets
/// `eta_k = min(1 / (2E), sqrt(ln(1/pi_k) / V_k))` where `E` is the largest
/// regret magnitude (or configured bound) seen so far. Weights are
/// proportional to `eta_k pi_k exp(eta_k R_k)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Boa {
    prior: Vec<f64>,
    regret: Vec<f64>,
    variance: Vec<f64>,
    eta: Vec<f64>,
    range: f64,
    weights: WeightVector,
}

impl Boa {
    pub fn new(k: usize) -> Result<Self, AggregationError> {
        let weights = WeightVector::uniform(k)?;
        Ok(Self {
            prior: weights.as_slice().to_vec(),
            regret: vec![0.0; k],
            variance: vec![0.0; k],
            eta: vec![0.0; k],
            range: 0.0,
            weights,
        })
    }

    pub fn learning_rates(&self) -> &[f64] {
        &self.eta
    }
}

impl AggregationRule for Boa {
    fn weights(&self) -> &WeightVector {
        &self.weights
    }

    fn update(&mut self, losses: &[f64], loss_bound: f64) -> Result<(), AggregationError> {
        let k = self.prior.len();
        check_losses(losses, k)?;
        if k == 1 {
            return Ok(());
        }
        let w = self.weights.as_slice();
        let mixed: f64 = w.iter().zip(losses).map(|(w, l)| w * l).sum();
        let r: Vec<f64> = losses.iter().map(|l| mixed - l).collect();
        let largest = r.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let bound = if loss_bound.is_finite() { loss_bound.max(0.0) } else { 0.0 };
        self.range = self.range.max(largest).max(bound);
        if self.range == 0.0 {
            return Ok(());
        }
        let cap = 1.0 / (2.0 * self.range);
        for j in 0..k {
            self.variance[j] += r[j] * r[j];
            let adaptive = (-self.prior[j].ln() / self.variance[j]).sqrt();
            self.eta[j] = if self.variance[j] > 0.0 { cap.min(adaptive) } else { cap };
            self.regret[j] += r[j] - self.eta[j] * r[j] * r[j];
        }
        let logw: Vec<f64> = (0..k)
            .map(|j| self.eta[j].ln() + self.prior[j].ln() + self.eta[j] * self.regret[j])
            .collect();
        self.weights = WeightVector::new(softmax(&logw))?;
        Ok(())
    }
}

/// Exponentially weighted average with a fixed learning rate applied to
/// losses scaled by the running loss range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ewa {
    learning_rate: f64,
    cumulative: Vec<f64>,
    weights: WeightVector,
}

impl Ewa {
    pub fn new(k: usize, learning_rate: f64) -> Result<Self, AggregationError> {
        if !(learning_rate > 0.0 && learning_rate.is_finite()) {
            return Err(AggregationError::Config(format!(
                "learning rate must be positive, got {learning_rate}"
            )));
        }
        Ok(Self {
            learning_rate,
            cumulative: vec![0.0; k],
            weights: WeightVector::uniform(k)?,
        })
    }
}

impl AggregationRule for Ewa {
    fn weights(&self) -> &WeightVector {
        &self.weights
    }

    fn update(&mut self, losses: &[f64], loss_bound: f64) -> Result<(), AggregationError> {
        check_losses(losses, self.cumulative.len())?;
        let scale = if loss_bound > 0.0 && loss_bound.is_finite() { loss_bound } else { 1.0 };
        for (c, l) in self.cumulative.iter_mut().zip(losses) {
            *c += l / scale;
        }
        let logw: Vec<f64> = self.cumulative.iter().map(|c| -self.learning_rate * c).collect();
        self.weights = WeightVector::new(softmax(&logw))?;
        Ok(())
    }
}

/// Equal weights forever.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UniformRule {
    weights: WeightVector,
}

impl UniformRule {
    pub fn new(k: usize) -> Result<Self, AggregationError> {
        Ok(Self {
            weights: WeightVector::uniform(k)?,
        })
    }
}

impl AggregationRule for UniformRule {
    fn weights(&self) -> &WeightVector {
        &self.weights
    }

    fn update(&mut self, losses: &[f64], _loss_bound: f64) -> Result<(), AggregationError> {
        check_losses(losses, self.weights.len())
    }
}

/// Configuration-level choice of rule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum RuleKind {
    Boa,
    Ewa { learning_rate: f64 },
    Uniform,
}

impl RuleKind {
    pub fn build(&self, k: usize) -> Result<Rule, AggregationError> {
        Ok(match self {
            Self::Boa => Rule::Boa(Boa::new(k)?),
            Self::Ewa { learning_rate } => Rule::Ewa(Ewa::new(k, *learning_rate)?),
            Self::Uniform => Rule::Uniform(UniformRule::new(k)?),
        })
    }
}

/// Serializable state of any built-in rule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum Rule {
    Boa(Boa),
    Ewa(Ewa),
    Uniform(UniformRule),
}

impl AggregationRule for Rule {
    fn weights(&self) -> &WeightVector {
        match self {
            Self::Boa(r) => r.weights(),
            Self::Ewa(r) => r.weights(),
            Self::Uniform(r) => r.weights(),
        }
    }

    fn update(&mut self, losses: &[f64], loss_bound: f64) -> Result<(), AggregationError> {
        match self {
            Self::Boa(r) => r.update(losses, loss_bound),
            Self::Ewa(r) => r.update(losses, loss_bound),
            Self::Uniform(r) => r.update(losses, loss_bound),
        }
    }
}
