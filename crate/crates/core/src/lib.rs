//! Online probabilistic forecasting for day-ahead electricity prices.
//!
//! The crate wraps any quantile forecaster in adaptive conformal layers and
//! online expert aggregation, and ships the backtest harness used to compare
//! them:
//!
//! - [`dataset`]: panel ingestion, a nonstationary synthetic generator, per-hour
//!   supervised series and sequential train/calibration splits.
//! - [`models`]: pinball-loss quantile regressors (linear, lasso, gradient
//!   boosting) and quantile-set prediction with crossing repair.
//! - [`conformal`]: conformity scores, the corrected empirical quantile and the
//!   online wrappers OSSCP, OSSCP-horizon, ACI and AgACI.
//! - [`aggregation`]: Bernstein online aggregation with the gradient trick.
//! - [`evaluation`]: coverage, width, pinball, CRPS and block-bootstrap bands.
//! - [`pipeline`]: config-driven backtests, grid search and report emission.

pub mod aggregation;
pub mod conformal;
pub mod dataset;
pub mod evaluation;
pub mod models;
pub mod pipeline;
pub mod protocol;
pub mod stats;

mod serde_inf;

pub use conformal::PredictionInterval;
pub use models::QuantileLevel;
