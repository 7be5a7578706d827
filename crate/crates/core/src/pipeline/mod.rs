//! Config-driven orchestration: backtests over hours, methods, windows,
//! calibration fractions and levels, grid search and report emission.

mod backtest;
mod config;
mod gridsearch;
mod report;

use thiserror::Error;

pub use backtest::{
    enumerate_cells, load_panel, run_backtest, run_backtest_on, BacktestOutput, Cell, CellFailure, RunSummary,
};
pub use config::{
    AdaptiveSource, CandidateGrid, ConformalSection, DataSection, DatasetSection, EvaluationSection,
    GridSearchSection, MethodSpec, Overrides, ReportFormat, RunConfig, RunSection,
};
pub use gridsearch::{expand_grid, grid_search, grid_search_on, select, CandidateScore, ModelSelection, SelectionReport};
pub use report::{
    emit_report, read_results, read_weights, write_results, LevelCurvePoint, PredictionRow, ReportFiles, ResultsRow,
    TimingRow, WeightPathPoint, WeightRow, SCHEMA_VERSION,
};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("config error: {0}")]
    Config(String),
    #[error("io error: {0}")]
    Io(String),
    #[error("unsupported schema version {0}")]
    Schema(u32),
    #[error(transparent)]
    Dataset(#[from] crate::dataset::DatasetError),
    #[error(transparent)]
    Model(#[from] crate::models::ModelError),
    #[error(transparent)]
    Conformal(#[from] crate::conformal::ConformalError),
    #[error(transparent)]
    Evaluation(#[from] crate::evaluation::EvalError),
}

impl PipelineError {
    pub fn is_config(&self) -> bool {
        matches!(self, Self::Config(_))
    }
}
