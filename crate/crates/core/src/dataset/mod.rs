//! Day-ahead price panels and the supervised series built from them.

mod design;
mod ingest;
mod panel;
pub(crate) mod split;
mod synthetic;

use std::path::PathBuf;

use thiserror::Error;

pub use design::{hour_slice_design, ColumnSource, SupervisedSeries};
pub use ingest::{load_prices_csv, write_panel_csv, CsvIngest, CsvSchema, RowIssue};
pub use panel::{FeatureAvailability, PanelFrame};
pub use split::{sequential_split, SplitIndices};
pub use synthetic::{generate_synthetic, SyntheticConfig};

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("missing required column `{0}`")]
    MissingColumn(String),
    #[error("duplicate (day, hour) key ({day}, {hour}) at line {line}")]
    DuplicateKey {
        day: chrono::NaiveDate,
        hour: u8,
        line: u64,
    },
    #[error("no valid rows in input")]
    Empty,
    #[error("invalid panel: {0}")]
    InvalidPanel(String),
    #[error("invalid synthetic config: {0}")]
    Config(String),
    #[error("hour {0} is not present in the panel")]
    HourAbsent(u8),
    #[error("panel has {days} days, fewer than the maximum lag {max_lag} + 1")]
    TooShort { days: usize, max_lag: usize },
    #[error("insufficient history: need {required} observations, {available} available")]
    InsufficientHistory { required: usize, available: usize },
    #[error("invalid split: {0}")]
    InvalidSplit(String),
}
