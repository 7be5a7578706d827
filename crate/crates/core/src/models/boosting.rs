//! Gradient-boosted quantile regression with regression-tree weak learners.

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{check_design, pinball_loss, ModelError, QuantileLevel};
use crate::stats;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GbHyper {
    pub n_estimators: usize,
    pub max_depth: usize,
    pub learning_rate: f64,
    pub subsample_frac: f64,
    pub min_samples_leaf: usize,
    pub seed: u64,
}

impl Default for GbHyper {
    fn default() -> Self {
        Self {
            n_estimators: 100,
            max_depth: 3,
            learning_rate: 0.1,
            subsample_frac: 0.8,
            min_samples_leaf: 1,
            seed: 0,
        }
    }
}

impl GbHyper {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.max_depth == 0 {
            return Err(ModelError::InvalidHyper("max_depth must be positive".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate <= 1.0) {
            return Err(ModelError::InvalidHyper(format!(
                "learning_rate must be in (0, 1], got {}",
                self.learning_rate
            )));
        }
        if !(self.subsample_frac > 0.0 && self.subsample_frac <= 1.0) {
            return Err(ModelError::InvalidHyper(format!(
                "subsample_frac must be in (0, 1], got {}",
                self.subsample_frac
            )));
        }
        if self.min_samples_leaf == 0 {
            return Err(ModelError::InvalidHyper("min_samples_leaf must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "node", rename_all = "snake_case")]
pub enum TreeNode {
    /// Rows with `x[feature] <= threshold` go to `left`.
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf { value: f64 },
}

/// Flat node array; node 0 is the root.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionTree {
    pub nodes: Vec<TreeNode>,
}

impl RegressionTree {
    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut at = 0;
        loop {
            match &self.nodes[at] {
                TreeNode::Leaf { value } => return *value,
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => at = if x[*feature] <= *threshold { *left } else { *right },
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[TreeNode], at: usize) -> usize {
            match &nodes[at] {
                TreeNode::Leaf { .. } => 0,
                TreeNode::Split { left, right, .. } => 1 + walk(nodes, *left).max(walk(nodes, *right)),
            }
        }
        walk(&self.nodes, 0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbQuantileModel {
    pub level: QuantileLevel,
    pub base_value: f64,
    pub trees: Vec<RegressionTree>,
    pub learning_rate: f64,
    pub max_depth: usize,
    pub n_estimators: usize,
    pub subsample_frac: f64,
    pub n_features: usize,
    /// Full-sample mean pinball loss after each stage; entry 0 is the base.
    pub train_loss: Vec<f64>,
}

impl GbQuantileModel {
    pub fn predict(&self, x: &[f64]) -> Result<f64, ModelError> {
        if x.len() != self.n_features {
            return Err(ModelError::DimensionMismatch {
                expected: self.n_features,
                got: x.len(),
            });
        }
        let boost: f64 = self.trees.iter().map(|t| t.predict(x)).sum();
        Ok(self.base_value + self.learning_rate * boost)
    }
}

struct TreeBuilder<'a> {
    x: &'a [Vec<f64>],
    grad: &'a [f64],
    resid: &'a [f64],
    beta: f64,
    max_depth: usize,
    min_leaf: usize,
    /// Per feature, all training rows ordered by that feature's value.
    order: &'a [Vec<usize>],
    in_node: Vec<bool>,
    nodes: Vec<TreeNode>,
}

impl TreeBuilder<'_> {
    fn leaf_value(&self, rows: &[usize]) -> f64 {
        let r: Vec<f64> = rows.iter().map(|&i| self.resid[i]).collect();
        stats::empirical_quantile(&r, self.beta).unwrap_or(0.0)
    }

    /// Best variance-reduction split of `rows` as (feature, threshold, gain).
    fn best_split(&mut self, rows: &[usize]) -> Option<(usize, f64, f64)> {
        let n = rows.len();
        if n < 2 * self.min_leaf {
            return None;
        }
        rows.iter().for_each(|&i| self.in_node[i] = true);
        let total: f64 = rows.iter().map(|&i| self.grad[i]).sum();
        let total_sq: f64 = rows.iter().map(|&i| self.grad[i] * self.grad[i]).sum();
        let parent_sse = total_sq - total * total / n as f64;
        let mut best: Option<(usize, f64, f64)> = None;
        let mut sorted = Vec::with_capacity(n);
        for (f, ord) in self.order.iter().enumerate() {
            sorted.clear();
            sorted.extend(ord.iter().copied().filter(|&i| self.in_node[i]));
            let (mut s, mut sq) = (0.0, 0.0);
            for k in 0..n - 1 {
                let g = self.grad[sorted[k]];
                s += g;
                sq += g * g;
                let nl = k + 1;
                let nr = n - nl;
                if nl < self.min_leaf || nr < self.min_leaf {
                    continue;
                }
                let (a, b) = (self.x[sorted[k]][f], self.x[sorted[k + 1]][f]);
                if a == b {
                    continue;
                }
                let sse_l = sq - s * s / nl as f64;
                let sr = total - s;
                let sse_r = (total_sq - sq) - sr * sr / nr as f64;
                let gain = parent_sse - sse_l - sse_r;
                if gain > 1e-10 && best.is_none_or(|(_, _, g)| gain > g) {
                    let mut thr = 0.5 * (a + b);
                    // midpoint can round up to `b` for adjacent floats
                    if thr >= b {
                        thr = a;
                    }
                    best = Some((f, thr, gain));
                }
            }
        }
        rows.iter().for_each(|&i| self.in_node[i] = false);
        best
    }

    fn grow(&mut self, rows: Vec<usize>, depth: usize) -> usize {
        let id = self.nodes.len();
        self.nodes.push(TreeNode::Leaf { value: 0.0 });
        let split = if depth < self.max_depth {
            self.best_split(&rows)
        } else {
            None
        };
        match split {
            None => {
                self.nodes[id] = TreeNode::Leaf {
                    value: self.leaf_value(&rows),
                };
            }
            Some((feature, threshold, _)) => {
                let (l, r): (Vec<usize>, Vec<usize>) =
                    rows.iter().partition(|&&i| self.x[i][feature] <= threshold);
                let left = self.grow(l, depth + 1);
                let right = self.grow(r, depth + 1);
                self.nodes[id] = TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                };
            }
        }
        id
    }
}

/// Fits `n_estimators` trees to the pinball negative gradient, starting from
/// the empirical `level`-quantile of `y`.
pub fn fit_gradient_boosting_qr(
    x: &[Vec<f64>],
    y: &[f64],
    level: QuantileLevel,
    hyper: &GbHyper,
) -> Result<GbQuantileModel, ModelError> {
    let p = check_design(x, y)?;
    hyper.validate()?;
    let n = y.len();
    let beta = level.value();
    let base_value = stats::empirical_quantile(y, beta).expect("non-empty");
    let mut fitted = vec![base_value; n];
    let loss_of = |fitted: &[f64]| {
        y.iter()
            .zip(fitted)
            .map(|(yi, fi)| pinball_loss(*yi, *fi, level))
            .sum::<f64>()
            / n as f64
    };
    let mut train_loss = vec![loss_of(&fitted)];
    let mut rng = ChaCha8Rng::seed_from_u64(hyper.seed);
    let n_sub = ((hyper.subsample_frac * n as f64).round() as usize).clamp(1, n);

    let order_all: Vec<Vec<usize>> = (0..p)
        .map(|f| {
            let mut idx: Vec<usize> = (0..n).collect();
            idx.sort_by(|&a, &b| x[a][f].total_cmp(&x[b][f]));
            idx
        })
        .collect();

    let mut trees = Vec::with_capacity(hyper.n_estimators);
    let mut resid = vec![0.0; n];
    let mut grad = vec![0.0; n];
    for _ in 0..hyper.n_estimators {
        for i in 0..n {
            resid[i] = y[i] - fitted[i];
            // midpoint of the subdifferential on exact ties, so a fit that
            // already matches part of the sample can still be split off
            grad[i] = if resid[i] > 0.0 {
                beta
            } else if resid[i] < 0.0 {
                beta - 1.0
            } else {
                beta - 0.5
            };
        }
        let (rows, order) = if n_sub == n {
            ((0..n).collect::<Vec<_>>(), None)
        } else {
            let mut rows = index::sample(&mut rng, n, n_sub).into_vec();
            rows.sort_unstable();
            let mut member = vec![false; n];
            rows.iter().for_each(|&i| member[i] = true);
            let order: Vec<Vec<usize>> = order_all
                .iter()
                .map(|o| o.iter().copied().filter(|&i| member[i]).collect())
                .collect();
            (rows, Some(order))
        };
        let mut builder = TreeBuilder {
            x,
            grad: &grad,
            resid: &resid,
            beta,
            max_depth: hyper.max_depth,
            min_leaf: hyper.min_samples_leaf,
            order: order.as_deref().unwrap_or(&order_all),
            in_node: vec![false; n],
            nodes: Vec::new(),
        };
        builder.grow(rows, 0);
        let tree = RegressionTree {
            nodes: builder.nodes,
        };
        for (f, row) in fitted.iter_mut().zip(x) {
            *f += hyper.learning_rate * tree.predict(row);
        }
        train_loss.push(loss_of(&fitted));
        trees.push(tree);
    }
    let model = GbQuantileModel {
        level,
        base_value,
        trees,
        learning_rate: hyper.learning_rate,
        max_depth: hyper.max_depth,
        n_estimators: hyper.n_estimators,
        subsample_frac: hyper.subsample_frac,
        n_features: p,
        train_loss,
    };
    Ok(model)
}
