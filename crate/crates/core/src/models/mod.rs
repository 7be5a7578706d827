//! Pinball-loss quantile regressors behind one forecaster contract.

mod boosting;
mod linear;

use std::cmp::Ordering;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use boosting::{fit_gradient_boosting_qr, GbHyper, GbQuantileModel, RegressionTree, TreeNode};
pub use linear::{fit_linear_qr, FitDiagnostics, LinearQrOptions, LinearQuantileModel};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("quantile level must lie in (0, 1), got {0}")]
    InvalidLevel(f64),
    #[error("no training rows")]
    EmptyData,
    #[error("dimension mismatch: expected {expected} features, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("invalid hyperparameter: {0}")]
    InvalidHyper(String),
    #[error("quantile levels must be strictly ascending")]
    LevelOrder,
    #[error("unsupported model document version {0}")]
    Version(u32),
    #[error("model document: {0}")]
    Document(String),
}

/// A quantile level `beta` in the open unit interval.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct QuantileLevel(f64);

impl QuantileLevel {
    pub fn new(beta: f64) -> Result<Self, ModelError> {
        if beta > 0.0 && beta < 1.0 {
            Ok(Self(beta))
        } else {
            Err(ModelError::InvalidLevel(beta))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for QuantileLevel {
    type Error = ModelError;

    fn try_from(v: f64) -> Result<Self, ModelError> {
        Self::new(v)
    }
}

impl From<QuantileLevel> for f64 {
    fn from(l: QuantileLevel) -> f64 {
        l.0
    }
}

impl fmt::Display for QuantileLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Pinball loss of level `beta` for target `y` and prediction `y_hat`.
pub fn pinball_loss(y: f64, y_hat: f64, beta: QuantileLevel) -> f64 {
    let r = y - y_hat;
    if r >= 0.0 {
        beta.0 * r
    } else {
        (beta.0 - 1.0) * r
    }
}

/// Mean pinball loss over paired targets and predictions.
pub fn mean_pinball(y: &[f64], y_hat: &[f64], beta: QuantileLevel) -> f64 {
    debug_assert_eq!(y.len(), y_hat.len());
    y.iter()
        .zip(y_hat)
        .map(|(a, b)| pinball_loss(*a, *b, beta))
        .sum::<f64>()
        / y.len() as f64
}

/// Sorts quantile values ascending to undo crossing between levels.
pub fn reorder_quantiles(values: &[f64]) -> Vec<f64> {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

/// Predicted values on an ascending grid of quantile levels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantileSetForecast {
    pub levels: Vec<QuantileLevel>,
    #[serde(with = "crate::serde_inf::vec")]
    pub values: Vec<f64>,
}

impl QuantileSetForecast {
    /// Pairs levels with values, checking lengths and level order.
    /// Values are taken as given; see [`QuantileSetForecast::reordered`].
    pub fn new(levels: Vec<QuantileLevel>, values: Vec<f64>) -> Result<Self, ModelError> {
        if levels.len() != values.len() {
            return Err(ModelError::DimensionMismatch {
                expected: levels.len(),
                got: values.len(),
            });
        }
        if levels.windows(2).any(|w| w[0].0 >= w[1].0) {
            return Err(ModelError::LevelOrder);
        }
        Ok(Self { levels, values })
    }

    /// Builds the forecast and repairs quantile crossing.
    pub fn reordered(levels: Vec<QuantileLevel>, values: Vec<f64>) -> Result<Self, ModelError> {
        let values = reorder_quantiles(&values);
        Self::new(levels, values)
    }

    pub fn is_monotone(&self) -> bool {
        self.values
            .windows(2)
            .all(|w| w[0].total_cmp(&w[1]) != Ordering::Greater)
    }
}

/// A fitted single-level quantile model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FittedQuantile {
    /// Ignores features and predicts one value.
    Constant { level: QuantileLevel, value: f64 },
    Linear(LinearQuantileModel),
    Boosting(GbQuantileModel),
}

impl FittedQuantile {
    pub fn level(&self) -> QuantileLevel {
        match self {
            Self::Constant { level, .. } => *level,
            Self::Linear(m) => m.level,
            Self::Boosting(m) => m.level,
        }
    }

    pub fn predict(&self, x: &[f64]) -> Result<f64, ModelError> {
        match self {
            Self::Constant { value, .. } => Ok(*value),
            Self::Linear(m) => m.predict(x),
            Self::Boosting(m) => m.predict(x),
        }
    }
}

/// Configuration of a base learner; fitting it yields a [`FittedQuantile`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BaseLearner {
    /// Empirical quantile of the training targets.
    Constant,
    /// Linear quantile regression, lasso-penalized when `lambda > 0`.
    Linear {
        lambda: f64,
        #[serde(default)]
        options: LinearQrOptions,
    },
    Boosting(GbHyper),
}

impl BaseLearner {
    pub fn label(&self) -> &'static str {
        match self {
            Self::Constant => "constant",
            Self::Linear { lambda, .. } if *lambda > 0.0 => "lasso_qr",
            Self::Linear { .. } => "linear_qr",
            Self::Boosting(_) => "qgb",
        }
    }

    /// Fits at `level`. `warm` may seed iterative solvers with a previous fit
    /// of the same learner; results stay deterministic given the inputs.
    pub fn fit(
        &self,
        x: &[Vec<f64>],
        y: &[f64],
        level: QuantileLevel,
        warm: Option<&FittedQuantile>,
    ) -> Result<FittedQuantile, ModelError> {
        match self {
            Self::Constant => {
                if y.iter().any(|v| !v.is_finite()) {
                    return Err(ModelError::NonFinite("targets"));
                }
                let value = crate::stats::empirical_quantile(y, level.value())
                    .ok_or(ModelError::EmptyData)?;
                Ok(FittedQuantile::Constant { level, value })
            }
            Self::Linear { lambda, options } => {
                let warm = match warm {
                    Some(FittedQuantile::Linear(m)) => Some(m),
                    _ => None,
                };
                fit_linear_qr(x, y, level, *lambda, options, warm).map(FittedQuantile::Linear)
            }
            Self::Boosting(h) => fit_gradient_boosting_qr(x, y, level, h).map(FittedQuantile::Boosting),
        }
    }
}

/// Lower and upper quantile models fitted on the same data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantilePair {
    pub lo: FittedQuantile,
    pub hi: FittedQuantile,
}

impl QuantilePair {
    pub fn fit(
        learner: &BaseLearner,
        x: &[Vec<f64>],
        y: &[f64],
        lo: QuantileLevel,
        hi: QuantileLevel,
        warm: Option<&QuantilePair>,
    ) -> Result<Self, ModelError> {
        Ok(Self {
            lo: learner.fit(x, y, lo, warm.map(|w| &w.lo))?,
            hi: learner.fit(x, y, hi, warm.map(|w| &w.hi))?,
        })
    }

    /// Predicted `(lower, upper)`, reordered if the two fits cross.
    pub fn predict(&self, x: &[f64]) -> Result<(f64, f64), ModelError> {
        let a = self.lo.predict(x)?;
        let b = self.hi.predict(x)?;
        Ok(if a <= b { (a, b) } else { (b, a) })
    }
}

/// Evaluates one model per level at `x` and repairs any crossing.
///
/// Models must be supplied in strictly ascending level order.
pub fn predict_quantiles(
    models: &[FittedQuantile],
    x: &[f64],
) -> Result<QuantileSetForecast, ModelError> {
    let levels: Vec<QuantileLevel> = models.iter().map(FittedQuantile::level).collect();
    let values = models
        .iter()
        .map(|m| m.predict(x))
        .collect::<Result<Vec<_>, _>>()?;
    QuantileSetForecast::reordered(levels, values)
}

pub const MODEL_DOCUMENT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelDocument {
    pub schema_version: u32,
    pub model: FittedQuantile,
}

/// Serializes a model to the versioned audit document.
pub fn model_to_json(model: &FittedQuantile) -> String {
    serde_json::to_string_pretty(&ModelDocument {
        schema_version: MODEL_DOCUMENT_VERSION,
        model: model.clone(),
    })
    .expect("model documents contain only finite numbers")
}

pub fn model_from_json(s: &str) -> Result<FittedQuantile, ModelError> {
    let doc: ModelDocument =
        serde_json::from_str(s).map_err(|e| ModelError::Document(e.to_string()))?;
    if doc.schema_version != MODEL_DOCUMENT_VERSION {
        return Err(ModelError::Version(doc.schema_version));
    }
    Ok(doc.model)
}

/// Validates a design matrix and returns its column count.
pub(crate) fn check_design(x: &[Vec<f64>], y: &[f64]) -> Result<usize, ModelError> {
    if y.is_empty() {
        return Err(ModelError::EmptyData);
    }
    if x.len() != y.len() {
        return Err(ModelError::DimensionMismatch {
            expected: y.len(),
            got: x.len(),
        });
    }
    let p = x[0].len();
    for row in x {
        if row.len() != p {
            return Err(ModelError::DimensionMismatch {
                expected: p,
                got: row.len(),
            });
        }
        if row.iter().any(|v| !v.is_finite()) {
            return Err(ModelError::NonFinite("features"));
        }
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(ModelError::NonFinite("targets"));
    }
    Ok(p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn lv(b: f64) -> QuantileLevel {
        QuantileLevel::new(b).unwrap()
    }

    #[test]
    fn pinball_hand_values() {
        assert!((pinball_loss(1.0, 0.0, lv(0.9)) - 0.9).abs() < 1e-15);
        assert!((pinball_loss(0.0, 1.0, lv(0.9)) - 0.1).abs() < 1e-15);
        for b in [0.05, 0.5, 0.95] {
            assert_eq!(pinball_loss(7.3, 7.3, lv(b)), 0.0);
        }
    }

    #[test]
    fn level_bounds() {
        assert!(QuantileLevel::new(0.0).is_err());
        assert!(QuantileLevel::new(1.0).is_err());
        assert!(QuantileLevel::new(f64::NAN).is_err());
        assert!(serde_json::from_str::<QuantileLevel>("1.5").is_err());
        assert_eq!(serde_json::from_str::<QuantileLevel>("0.25").unwrap(), lv(0.25));
    }

    #[test]
    fn reorder_examples() {
        assert_eq!(reorder_quantiles(&[3.0, 2.0, 5.0]), vec![2.0, 3.0, 5.0]);
        assert_eq!(reorder_quantiles(&[1.0, 2.0, 3.0]), vec![1.0, 2.0, 3.0]);
        assert_eq!(reorder_quantiles(&[4.0, 4.0, 4.0]), vec![4.0, 4.0, 4.0]);
    }

    #[test]
    fn predict_quantiles_repairs_crossing() {
        let models: Vec<FittedQuantile> = [(0.1, 5.0), (0.5, 3.0), (0.9, 8.0)]
            .iter()
            .map(|&(l, v)| FittedQuantile::Constant { level: lv(l), value: v })
            .collect();
        let f = predict_quantiles(&models, &[]).unwrap();
        assert_eq!(f.values, vec![3.0, 5.0, 8.0]);
        assert!(f.is_monotone());

        let single = predict_quantiles(&models[1..2], &[]).unwrap();
        assert_eq!(single.values, vec![3.0]);

        let reversed: Vec<_> = models.iter().rev().cloned().collect();
        assert_eq!(predict_quantiles(&reversed, &[]), Err(ModelError::LevelOrder));
    }

    #[test]
    fn constant_targets_give_equal_quantiles() {
        let x: Vec<Vec<f64>> = (0..50).map(|i| vec![i as f64, (i * i) as f64]).collect();
        let y = vec![4.2; 50];
        for learner in [
            BaseLearner::Linear { lambda: 0.0, options: LinearQrOptions::default() },
            BaseLearner::Boosting(GbHyper { n_estimators: 10, ..GbHyper::default() }),
            BaseLearner::Constant,
        ] {
            let models: Vec<_> = [0.1, 0.5, 0.9]
                .iter()
                .map(|&b| learner.fit(&x, &y, lv(b), None).unwrap())
                .collect();
            let f = predict_quantiles(&models, &[3.0, 100.0]).unwrap();
            assert!(f.values.iter().all(|v| *v == 4.2), "{}: {:?}", learner.label(), f.values);
        }
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let x: Vec<Vec<f64>> = (0..20).map(|i| vec![i as f64]).collect();
        let y: Vec<f64> = (0..20).map(f64::from).collect();
        let m = BaseLearner::Linear { lambda: 0.0, options: LinearQrOptions::default() }
            .fit(&x, &y, lv(0.5), None)
            .unwrap();
        assert!(matches!(m.predict(&[1.0, 2.0]), Err(ModelError::DimensionMismatch { .. })));
        let mut ragged = x.clone();
        ragged[3].push(1.0);
        assert!(check_design(&ragged, &y).is_err());
        assert_eq!(check_design(&[], &[]), Err(ModelError::EmptyData));
    }

    #[test]
    fn model_document_roundtrip() {
        let x: Vec<Vec<f64>> = (0..40).map(|i| vec![(i % 7) as f64, i as f64]).collect();
        let y: Vec<f64> = x.iter().map(|r| r[0] * 2.0 + r[1] * 0.1).collect();
        for learner in [
            BaseLearner::Linear { lambda: 0.01, options: LinearQrOptions::default() },
            BaseLearner::Boosting(GbHyper { n_estimators: 5, max_depth: 2, ..GbHyper::default() }),
        ] {
            let m = learner.fit(&x, &y, lv(0.7), None).unwrap();
            let back = model_from_json(&model_to_json(&m)).unwrap();
            assert_eq!(back, m);
        }
        let bad = r#"{"schema_version":9,"model":{"kind":"constant","level":0.5,"value":1.0}}"#;
        assert_eq!(model_from_json(bad), Err(ModelError::Version(9)));
    }

    proptest! {
        #[test]
        fn reorder_is_sorted_permutation(values in proptest::collection::vec(-1e6f64..1e6, 0..40)) {
            let out = reorder_quantiles(&values);
            prop_assert!(out.windows(2).all(|w| w[0] <= w[1]));
            let mut a = values.clone();
            a.sort_by(f64::total_cmp);
            prop_assert_eq!(&out, &a);
            prop_assert_eq!(reorder_quantiles(&out), out);
        }

        #[test]
        fn pinball_subgradient_matches_finite_differences(
            y in -100.0f64..100.0,
            offset in 0.01f64..50.0,
            below in any::<bool>(),
            beta in 0.01f64..0.99,
        ) {
            let b = lv(beta);
            let y_hat = if below { y + offset } else { y - offset };
            let h = 1e-6;
            let fd = (pinball_loss(y, y_hat + h, b) - pinball_loss(y, y_hat - h, b)) / (2.0 * h);
            // derivative w.r.t. the prediction: 1{y <= y_hat} - beta
            let analytic = if y <= y_hat { 1.0 - beta } else { -beta };
            prop_assert!((fd - analytic).abs() < 1e-4, "fd {} analytic {}", fd, analytic);
            prop_assert!(pinball_loss(y, y_hat, b) > 0.0);
        }

        #[test]
        fn pinball_is_convex_in_prediction(
            y in -10.0f64..10.0, a in -10.0f64..10.0, c in -10.0f64..10.0,
            t in 0.0f64..1.0, beta in 0.01f64..0.99,
        ) {
            let b = lv(beta);
            let mid = t * a + (1.0 - t) * c;
            let lhs = pinball_loss(y, mid, b);
            let rhs = t * pinball_loss(y, a, b) + (1.0 - t) * pinball_loss(y, c, b);
            prop_assert!(lhs <= rhs + 1e-9);
        }
    }
}
