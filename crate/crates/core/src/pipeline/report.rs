use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::ReportFormat;
use super::PipelineError;
use crate::serde_inf;

/// Version of every table written by the pipeline.
pub const SCHEMA_VERSION: u32 = 1;

/// One evaluated (cell, level, period). Wall time is kept out of this table
/// so reruns compare byte for byte; see `timings.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultsRow {
    pub schema_version: u32,
    pub run_id: String,
    pub method: String,
    pub base_model: String,
    pub window: usize,
    pub cal_frac: f64,
    pub hour: u8,
    pub level: f64,
    pub period: String,
    pub n: usize,
    pub coverage: f64,
    #[serde(with = "serde_inf")]
    pub width: f64,
    pub n_infinite: usize,
    #[serde(with = "serde_inf")]
    pub pinball: f64,
    /// CRPS of the quantile set formed by the bounds at every configured level.
    #[serde(with = "serde_inf")]
    pub crps: f64,
    pub coverage_ci_lo: f64,
    pub coverage_ci_hi: f64,
}

/// Per-day forecast of one cell at one level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRow {
    pub day: chrono::NaiveDate,
    pub hour: u8,
    pub method: String,
    pub base_model: String,
    pub window: usize,
    pub cal_frac: f64,
    pub level: f64,
    #[serde(with = "serde_inf")]
    pub lower: f64,
    #[serde(with = "serde_inf")]
    pub upper: f64,
    pub y: f64,
}

/// Weight of one expert on one bound, as used for the forecast of `day`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightRow {
    pub day: chrono::NaiveDate,
    pub hour: u8,
    pub method: String,
    pub base_model: String,
    pub window: usize,
    pub cal_frac: f64,
    pub level: f64,
    pub bound: String,
    pub expert: String,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingRow {
    pub method: String,
    pub base_model: String,
    pub window: usize,
    pub cal_frac: f64,
    pub hour: u8,
    pub level: f64,
    pub seconds: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct ResultsDocument {
    schema_version: u32,
    rows: Vec<ResultsRow>,
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> PipelineError {
    PipelineError::Io(format!("{}: {e}", path.display()))
}

pub(crate) fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), PipelineError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| io_err(path, e))?;
    for r in rows {
        w.serialize(r).map_err(|e| io_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

pub(crate) fn read_csv<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, PipelineError> {
    let mut r = csv::Reader::from_path(path).map_err(|e| io_err(path, e))?;
    r.deserialize()
        .collect::<Result<Vec<T>, _>>()
        .map_err(|e| io_err(path, e))
}

pub fn write_results(path: &Path, rows: &[ResultsRow], format: ReportFormat) -> Result<(), PipelineError> {
    match format {
        ReportFormat::Csv => write_csv(path, rows),
        ReportFormat::Json => {
            let doc = ResultsDocument {
                schema_version: SCHEMA_VERSION,
                rows: rows.to_vec(),
            };
            let text = serde_json::to_string_pretty(&doc).expect("rows serialize");
            fs::write(path, text + "\n").map_err(|e| io_err(path, e))
        }
    }
}

/// Reads a results table; the format follows the file extension.
pub fn read_results(path: &Path) -> Result<Vec<ResultsRow>, PipelineError> {
    let rows: Vec<ResultsRow> = if path.extension().is_some_and(|e| e == "json") {
        let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
        let doc: ResultsDocument = serde_json::from_str(&text).map_err(|e| io_err(path, e))?;
        if doc.schema_version != SCHEMA_VERSION {
            return Err(PipelineError::Schema(doc.schema_version));
        }
        doc.rows
    } else {
        read_csv(path)?
    };
    if let Some(r) = rows.iter().find(|r| r.schema_version != SCHEMA_VERSION) {
        return Err(PipelineError::Schema(r.schema_version));
    }
    Ok(rows)
}

pub fn read_weights(path: &Path) -> Result<Vec<WeightRow>, PipelineError> {
    read_csv(path)
}

/// Coverage and width against the target level, one series per method,
/// base model, window, fraction, hour and period.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelCurvePoint {
    pub schema_version: u32,
    pub method: String,
    pub base_model: String,
    pub window: usize,
    pub cal_frac: f64,
    pub hour: u8,
    pub period: String,
    pub target: f64,
    pub coverage: f64,
    #[serde(with = "serde_inf")]
    pub width: f64,
}

/// Daily weight path of one expert; the weight-evolution plot series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightPathPoint {
    pub schema_version: u32,
    pub day: chrono::NaiveDate,
    pub hour: u8,
    pub method: String,
    pub base_model: String,
    pub window: usize,
    pub cal_frac: f64,
    pub level: f64,
    pub bound: String,
    pub expert: String,
    pub weight: f64,
}

/// Files written by [`emit_report`].
#[derive(Debug, Clone, Default)]
pub struct ReportFiles {
    pub results: PathBuf,
    pub level_curves: Option<PathBuf>,
    pub weight_paths: Option<PathBuf>,
}

/// Writes the tidy results table and, with `plot_data`, the level curves and
/// (when weights are supplied) the weight paths.
pub fn emit_report(
    rows: &[ResultsRow],
    weights: &[WeightRow],
    dir: &Path,
    format: ReportFormat,
    plot_data: bool,
) -> Result<ReportFiles, PipelineError> {
    if rows.is_empty() {
        return Err(PipelineError::Config("results table is empty".into()));
    }
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let ext = match format {
        ReportFormat::Csv => "csv",
        ReportFormat::Json => "json",
    };
    let mut files = ReportFiles {
        results: dir.join(format!("results.{ext}")),
        ..Default::default()
    };
    write_results(&files.results, rows, format)?;
    if !plot_data {
        return Ok(files);
    }
    let mut curves: Vec<LevelCurvePoint> = rows
        .iter()
        .map(|r| LevelCurvePoint {
            schema_version: SCHEMA_VERSION,
            method: r.method.clone(),
            base_model: r.base_model.clone(),
            window: r.window,
            cal_frac: r.cal_frac,
            hour: r.hour,
            period: r.period.clone(),
            target: r.level,
            coverage: r.coverage,
            width: r.width,
        })
        .collect();
    curves.sort_by(|a, b| {
        (&a.method, &a.base_model, a.window, a.hour, &a.period)
            .cmp(&(&b.method, &b.base_model, b.window, b.hour, &b.period))
            .then(a.cal_frac.total_cmp(&b.cal_frac))
            .then(a.target.total_cmp(&b.target))
    });
    let path = dir.join("plot_level_curves.csv");
    write_csv(&path, &curves)?;
    files.level_curves = Some(path);
    if !weights.is_empty() {
        let points: Vec<WeightPathPoint> = weights
            .iter()
            .map(|w| WeightPathPoint {
                schema_version: SCHEMA_VERSION,
                day: w.day,
                hour: w.hour,
                method: w.method.clone(),
                base_model: w.base_model.clone(),
                window: w.window,
                cal_frac: w.cal_frac,
                level: w.level,
                bound: w.bound.clone(),
                expert: w.expert.clone(),
                weight: w.weight,
            })
            .collect();
        let path = dir.join("plot_weight_paths.csv");
        write_csv(&path, &points)?;
        files.weight_paths = Some(path);
    }
    Ok(files)
}
