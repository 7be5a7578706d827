use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::time::Instant;

use chrono::NaiveDate;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::{MethodSpec, RunConfig};
use super::report::{
    emit_report, write_csv, PredictionRow, ResultsRow, TimingRow, WeightRow, SCHEMA_VERSION,
};
use super::PipelineError;
use crate::aggregation::IntervalAggregator;
use crate::conformal::{
    Aci, AgAci, CalibrationSource, ConformalError, ConformalMethod, RawQuantile, SplitConformal,
};
use crate::dataset::{generate_synthetic, hour_slice_design, load_prices_csv, PanelFrame, SupervisedSeries};
use crate::evaluation::{block_bootstrap_ci, crps_riemann};
use crate::models::{pinball_loss, BaseLearner, QuantileLevel, QuantileSetForecast};
use crate::protocol::{HygieneSpy, OnlineProtocol, ProtocolViolation};
use crate::PredictionInterval;

/// Builds the panel named by the data section.
pub fn load_panel(cfg: &RunConfig) -> Result<PanelFrame, PipelineError> {
    match &cfg.data.csv {
        Some(path) => Ok(load_prices_csv(path, &cfg.data.schema)?.panel),
        None => Ok(generate_synthetic(&cfg.dataset.synthetic)?),
    }
}

/// One backtest stream: a method on one hour, window, fraction and level.
#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    pub hour: u8,
    pub method: MethodSpec,
    /// Base model names; several only for ensembles.
    pub base_models: Vec<String>,
    pub window: usize,
    pub cal_frac: f64,
    pub level: f64,
}

impl Cell {
    pub fn base_label(&self) -> String {
        self.base_models.join("+")
    }

    /// Stable text key; also seeds the cell's bootstrap.
    pub fn key(&self) -> String {
        format!(
            "{}|{}|h{}|w{}|c{}|l{}",
            self.method,
            self.base_label(),
            self.hour,
            self.window,
            self.cal_frac,
            self.level
        )
    }
}

/// Every cell of the config in a fixed order.
pub fn enumerate_cells(cfg: &RunConfig) -> Vec<Cell> {
    let r = &cfg.run;
    let mut cells = Vec::new();
    for &hour in &r.hours {
        for method in &r.methods {
            let bases: Vec<Vec<String>> = if method.is_ensemble() {
                vec![r.base_models.clone()]
            } else {
                r.base_models.iter().map(|b| vec![b.clone()]).collect()
            };
            for base_models in bases {
                for &window in &r.windows {
                    for &cal_frac in &r.cal_fracs {
                        for &level in &r.levels {
                            cells.push(Cell {
                                hour,
                                method: method.clone(),
                                base_models: base_models.clone(),
                                window,
                                cal_frac,
                                level,
                            });
                        }
                    }
                }
            }
        }
    }
    cells
}

fn build_method(
    cfg: &RunConfig,
    method: &MethodSpec,
    learner: &BaseLearner,
    cell: &Cell,
    hist_x: &[Vec<f64>],
    hist_y: &[f64],
    record_weights: bool,
) -> Result<ConformalMethod, ConformalError> {
    let c = &cfg.conformal;
    let alpha = 1.0 - cell.level;
    let spec = method.source_spec(cell.window, cell.cal_frac, c);
    let required = spec.required_history()?;
    let (hx, hy) = (&hist_x[hist_x.len() - required..], &hist_y[hist_y.len() - required..]);
    let source = CalibrationSource::build(&spec, learner, alpha, hx, hy)?;
    Ok(match method {
        MethodSpec::RawQr => ConformalMethod::Raw(RawQuantile::new(source, alpha)?),
        MethodSpec::Osscp | MethodSpec::OsscpHorizon => {
            ConformalMethod::Split(SplitConformal::new(source, alpha)?)
        }
        MethodSpec::Aci { gamma } => {
            ConformalMethod::Aci(Aci::new(source, alpha, gamma.unwrap_or(c.aci_gamma))?)
        }
        MethodSpec::AgAci => {
            let m = AgAci::new(source, alpha, c.gammas.clone(), &c.rule, c.gradient_trick, hy)?;
            ConformalMethod::AgAci(if record_weights { m.with_history() } else { m })
        }
        MethodSpec::Aggregate(_) | MethodSpec::Uniform(_) => {
            unreachable!("ensembles are assembled from their members")
        }
    })
}

enum Combiner {
    Boa(IntervalAggregator),
    Mean,
}

/// Experts run side by side and combined bound by bound.
struct Ensemble {
    experts: Vec<HygieneSpy<ConformalMethod>>,
    combiner: Combiner,
    level: f64,
}

enum Component {
    Single(ConformalMethod),
    Ensemble(Ensemble),
}

impl OnlineProtocol for Component {
    type Input = [f64];
    type Output = PredictionInterval;
    type Error = ConformalError;

    fn issue(&mut self, x: &[f64]) -> Result<PredictionInterval, ConformalError> {
        match self {
            Self::Single(m) => m.issue(x),
            Self::Ensemble(e) => {
                let ivs = e
                    .experts
                    .iter_mut()
                    .map(|m| m.issue(x))
                    .collect::<Result<Vec<_>, _>>()?;
                let lowers: Vec<f64> = ivs.iter().map(|i| i.lower).collect();
                let uppers: Vec<f64> = ivs.iter().map(|i| i.upper).collect();
                let (lo, hi) = match &mut e.combiner {
                    Combiner::Boa(agg) => agg.issue(&lowers, &uppers)?,
                    Combiner::Mean => {
                        let k = ivs.len() as f64;
                        let lo = lowers.iter().sum::<f64>() / k;
                        let hi = uppers.iter().sum::<f64>() / k;
                        if lo <= hi { (lo, hi) } else { (hi, lo) }
                    }
                };
                PredictionInterval::new(lo, hi, e.level)
            }
        }
    }

    fn observe(&mut self, y: f64) -> Result<(), ConformalError> {
        match self {
            Self::Single(m) => m.observe(y),
            Self::Ensemble(e) => {
                for m in &mut e.experts {
                    m.observe(y)?;
                }
                if let Combiner::Boa(agg) = &mut e.combiner {
                    agg.observe(y)?;
                }
                Ok(())
            }
        }
    }
}

impl Component {
    fn violations(&self) -> Vec<ProtocolViolation> {
        match self {
            Self::Single(_) => Vec::new(),
            Self::Ensemble(e) => e
                .experts
                .iter()
                .flat_map(|m| m.violations().iter().map(|(_, v)| *v))
                .collect(),
        }
    }

    /// Per-step weights `(bound, expert labels, rows)` of BOA-driven parts.
    fn weight_history(&self, base_models: &[String]) -> Option<(Vec<String>, [&[Vec<f64>]; 2])> {
        match self {
            Self::Single(ConformalMethod::AgAci(m)) => Some((
                m.gammas().iter().map(|g| format!("gamma={g}")).collect(),
                [m.aggregator().lower().history(), m.aggregator().upper().history()],
            )),
            Self::Ensemble(Ensemble {
                combiner: Combiner::Boa(agg),
                ..
            }) => Some((
                base_models.to_vec(),
                [agg.lower().history(), agg.upper().history()],
            )),
            _ => None,
        }
    }
}

/// Streams of one hour shared by every cell of that hour.
struct HourData {
    series: SupervisedSeries,
    /// Test rows `[start, end)`.
    start: usize,
    end: usize,
}

struct CellRun {
    intervals: Vec<PredictionInterval>,
    weights: Vec<WeightRow>,
    violations: usize,
    seconds: f64,
}

fn run_cell(cfg: &RunConfig, data: &HourData, cell: &Cell) -> Result<CellRun, PipelineError> {
    let started = Instant::now();
    let s = &data.series;
    let (hist_x, hist_y) = (&s.x[..data.start], &s.y[..data.start]);
    let record = cfg.evaluation.write_predictions;
    let learner = |name: &str| &cfg.models[name];
    let component = match &cell.method {
        MethodSpec::Aggregate(inner) | MethodSpec::Uniform(inner) => {
            let experts = cell
                .base_models
                .iter()
                .map(|b| {
                    build_method(cfg, inner, learner(b), cell, hist_x, hist_y, false).map(HygieneSpy::new)
                })
                .collect::<Result<Vec<_>, _>>()?;
            let combiner = if matches!(cell.method, MethodSpec::Aggregate(_)) {
                let rule = &cfg.conformal.rule;
                let agg = IntervalAggregator::new(
                    experts.len(),
                    1.0 - cell.level,
                    rule,
                    cfg.conformal.gradient_trick,
                    hist_y,
                )
                .map_err(ConformalError::from)?;
                Combiner::Boa(if record { agg.with_history() } else { agg })
            } else {
                Combiner::Mean
            };
            Component::Ensemble(Ensemble {
                experts,
                combiner,
                level: cell.level,
            })
        }
        m => Component::Single(build_method(cfg, m, learner(&cell.base_models[0]), cell, hist_x, hist_y, record)?),
    };
    let mut spy = HygieneSpy::new(component);
    let mut intervals = Vec::with_capacity(data.end - data.start);
    for t in data.start..data.end {
        intervals.push(spy.issue(&s.x[t])?);
        spy.observe(s.y[t])?;
    }
    let violations = spy.violations().len() + spy.inner().violations().len();
    let mut weights = Vec::new();
    if record {
        if let Some((labels, hist)) = spy.inner().weight_history(&cell.base_models) {
            for (bound, rows) in ["lower", "upper"].into_iter().zip(hist) {
                for (step, w) in rows.iter().enumerate() {
                    for (label, weight) in labels.iter().zip(w) {
                        weights.push(WeightRow {
                            day: s.days[data.start + step],
                            hour: cell.hour,
                            method: cell.method.to_string(),
                            base_model: cell.base_label(),
                            window: cell.window,
                            cal_frac: cell.cal_frac,
                            level: cell.level,
                            bound: bound.into(),
                            expert: label.clone(),
                            weight: *weight,
                        });
                    }
                }
            }
        }
    }
    Ok(CellRun {
        intervals,
        weights,
        violations,
        seconds: started.elapsed().as_secs_f64(),
    })
}

/// A cell that could not be completed; the rest of the run carries on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellFailure {
    pub cell: String,
    pub error: String,
}

#[derive(Debug, Clone, Default)]
pub struct BacktestOutput {
    pub run_id: String,
    pub rows: Vec<ResultsRow>,
    pub predictions: Vec<PredictionRow>,
    pub weights: Vec<WeightRow>,
    pub timings: Vec<TimingRow>,
    pub failures: Vec<CellFailure>,
    pub cells: usize,
    pub spy_violations: usize,
}

/// Reporting periods of the test range: `all`, or `pre` / `post` around the
/// split date.
fn periods(days: &[NaiveDate], split: Option<NaiveDate>) -> Vec<(&'static str, std::ops::Range<usize>)> {
    match split {
        None => vec![("all", 0..days.len())],
        Some(d) => {
            let k = days.partition_point(|x| *x < d);
            vec![("pre", 0..k), ("post", k..days.len())]
        }
    }
}

fn bootstrap_seed(run_seed: u64, key: &str) -> u64 {
    let digest = Sha256::digest(key.as_bytes());
    let mut b = [0u8; 8];
    b.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(b) ^ run_seed
}

/// Mean CRPS of the quantile sets spelled out by the bounds of every level.
fn crps_over_levels(runs: &[(&Cell, &CellRun)], y: &[f64], range: std::ops::Range<usize>) -> Result<f64, PipelineError> {
    let mut levels = Vec::with_capacity(2 * runs.len());
    for (c, _) in runs {
        let a = 1.0 - c.level;
        levels.push(a / 2.0);
        levels.push(1.0 - a / 2.0);
    }
    let mut order: Vec<usize> = (0..levels.len()).collect();
    order.sort_by(|a, b| levels[*a].total_cmp(&levels[*b]));
    let q_levels = order
        .iter()
        .map(|&i| QuantileLevel::new(levels[i]))
        .collect::<Result<Vec<_>, _>>()?;
    let mut total = 0.0;
    for t in range.clone() {
        let values: Vec<f64> = order
            .iter()
            .map(|&i| {
                let iv = &runs[i / 2].1.intervals[t];
                if i % 2 == 0 { iv.lower } else { iv.upper }
            })
            .collect();
        let f = QuantileSetForecast::reordered(q_levels.clone(), values)?;
        total += crps_riemann(&f, y[t])?;
    }
    Ok(total / range.len() as f64)
}

fn metrics_rows(
    cfg: &RunConfig,
    run_id: &str,
    runs: &[(&Cell, &CellRun)],
    days: &[NaiveDate],
    y: &[f64],
) -> Result<Vec<ResultsRow>, PipelineError> {
    let e = &cfg.evaluation;
    let mut rows = Vec::new();
    for (period, range) in periods(days, cfg.run.split_date) {
        if range.is_empty() {
            return Err(PipelineError::Config(format!("reporting period `{period}` is empty")));
        }
        let crps = if runs.len() >= 2 {
            crps_over_levels(runs, y, range.clone())?
        } else {
            f64::NAN
        };
        for (cell, run) in runs {
            let ivs = &run.intervals[range.clone()];
            let ys = &y[range.clone()];
            let hits: Vec<f64> = ivs.iter().zip(ys).map(|(i, y)| f64::from(u8::from(i.contains(*y)))).collect();
            let n = ys.len();
            let n_infinite = ivs.iter().filter(|i| !i.is_finite()).count();
            let width = if n_infinite > 0 {
                f64::INFINITY
            } else {
                crate::stats::mean_iter(ivs.iter().map(PredictionInterval::width)).expect("non-empty")
            };
            let a = 1.0 - cell.level;
            let (lo, hi) = (QuantileLevel::new(a / 2.0)?, QuantileLevel::new(1.0 - a / 2.0)?);
            let pinball = crate::stats::mean_iter(
                ivs.iter()
                    .zip(ys)
                    .map(|(i, y)| 0.5 * (pinball_loss(*y, i.lower, lo) + pinball_loss(*y, i.upper, hi))),
            )
            .expect("non-empty");
            let key = format!("{}|{period}", cell.key());
            let ci = block_bootstrap_ci(&hits, e.block_len.min(n), e.n_boot, e.ci, bootstrap_seed(cfg.run.seed, &key))?;
            rows.push(ResultsRow {
                schema_version: SCHEMA_VERSION,
                run_id: run_id.to_string(),
                method: cell.method.to_string(),
                base_model: cell.base_label(),
                window: cell.window,
                cal_frac: cell.cal_frac,
                hour: cell.hour,
                level: cell.level,
                period: period.into(),
                n,
                coverage: ci.point,
                width,
                n_infinite,
                pinball,
                crps,
                coverage_ci_lo: ci.lo,
                coverage_ci_hi: ci.hi,
            });
        }
    }
    Ok(rows)
}

fn prepare_hours(cfg: &RunConfig, panel: &PanelFrame) -> Result<BTreeMap<u8, HourData>, PipelineError> {
    let r = &cfg.run;
    let mut out = BTreeMap::new();
    for &h in &r.hours {
        let series = hour_slice_design(panel, h, &cfg.data.lags)
            .map_err(|e| PipelineError::Config(format!("hour {h}: {e}")))?;
        let start = series.first_row_on_or_after(r.test_start);
        let end = match r.test_end.and_then(|d| d.succ_opt()) {
            Some(d) => series.first_row_on_or_after(d),
            None => series.len(),
        };
        if start >= end {
            return Err(PipelineError::Config(format!("hour {h}: no test days in the data")));
        }
        out.insert(h, HourData { series, start, end });
    }
    Ok(out)
}

/// Runs every cell of `cfg` on `panel`. Cells run in parallel; a failing
/// cell is reported and excluded while the others complete.
pub fn run_backtest_on(cfg: &RunConfig, panel: &PanelFrame) -> Result<BacktestOutput, PipelineError> {
    cfg.validate()?;
    let run_id = cfg.run_id();
    let hours = prepare_hours(cfg, panel)?;
    let cells = enumerate_cells(cfg);
    let runs: Vec<Result<CellRun, PipelineError>> = cells
        .par_iter()
        .map(|c| {
            let data = &hours[&c.hour];
            if data.start < c.window {
                return Err(PipelineError::Conformal(ConformalError::InsufficientHistory {
                    required: c.window,
                    available: data.start,
                }));
            }
            run_cell(cfg, data, c)
        })
        .collect();

    let mut out = BacktestOutput {
        run_id: run_id.clone(),
        cells: cells.len(),
        ..Default::default()
    };
    // cells sharing everything but the level form one group
    let n_levels = cfg.run.levels.len();
    let groups: Vec<(usize, Result<Vec<ResultsRow>, String>)> = (0..cells.len() / n_levels)
        .into_par_iter()
        .map(|g| {
            let idx = g * n_levels..(g + 1) * n_levels;
            let data = &hours[&cells[idx.start].hour];
            let mut ok = Vec::with_capacity(n_levels);
            for i in idx {
                match &runs[i] {
                    Ok(r) => ok.push((&cells[i], r)),
                    Err(e) => return (g, Err(format!("{}: {e}", cells[i].key()))),
                }
            }
            let days = &data.series.days[data.start..data.end];
            let y = &data.series.y[data.start..data.end];
            let rows = metrics_rows(cfg, &run_id, &ok, days, y).map_err(|e| format!("{}: {e}", cells[g * n_levels].key()));
            (g, rows)
        })
        .collect();
    for (g, rows) in groups {
        match rows {
            Ok(rows) => out.rows.extend(rows),
            Err(e) => {
                let cell = cells[g * n_levels].key();
                let cell = cell.rsplit_once('|').map_or(cell.clone(), |(head, _)| head.to_string());
                out.failures.push(CellFailure { cell, error: e });
            }
        }
    }
    for (cell, run) in cells.iter().zip(runs) {
        let Ok(run) = run else { continue };
        let data = &hours[&cell.hour];
        out.spy_violations += run.violations;
        out.timings.push(TimingRow {
            method: cell.method.to_string(),
            base_model: cell.base_label(),
            window: cell.window,
            cal_frac: cell.cal_frac,
            hour: cell.hour,
            level: cell.level,
            seconds: run.seconds,
        });
        if cfg.evaluation.write_predictions {
            for (k, iv) in run.intervals.iter().enumerate() {
                let t = data.start + k;
                out.predictions.push(PredictionRow {
                    day: data.series.days[t],
                    hour: cell.hour,
                    method: cell.method.to_string(),
                    base_model: cell.base_label(),
                    window: cell.window,
                    cal_frac: cell.cal_frac,
                    level: cell.level,
                    lower: iv.lower,
                    upper: iv.upper,
                    y: data.series.y[t],
                });
            }
            out.weights.extend(run.weights);
        }
    }
    Ok(out)
}

/// Loads the data and runs the backtest.
pub fn run_backtest(cfg: &RunConfig) -> Result<BacktestOutput, PipelineError> {
    cfg.validate()?;
    let panel = load_panel(cfg)?;
    run_backtest_on(cfg, &panel)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub schema_version: u32,
    pub run_id: String,
    pub cells: usize,
    pub rows: usize,
    pub spy_violations: usize,
    pub failures: Vec<CellFailure>,
}

impl BacktestOutput {
    pub fn summary(&self) -> RunSummary {
        RunSummary {
            schema_version: SCHEMA_VERSION,
            run_id: self.run_id.clone(),
            cells: self.cells,
            rows: self.rows.len(),
            spy_violations: self.spy_violations,
            failures: self.failures.clone(),
        }
    }

    /// Writes the results table (plus plot data), predictions, weights,
    /// timings, the run summary and the resolved config into `dir`.
    pub fn write(&self, cfg: &RunConfig, dir: &Path) -> Result<(), PipelineError> {
        let io = |e: std::io::Error| PipelineError::Io(format!("{}: {e}", dir.display()));
        fs::create_dir_all(dir).map_err(io)?;
        if !self.rows.is_empty() {
            let e = &cfg.evaluation;
            emit_report(&self.rows, &self.weights, dir, e.format, e.plot_data)?;
        }
        if cfg.evaluation.write_predictions {
            write_csv(&dir.join("predictions.csv"), &self.predictions)?;
            write_csv(&dir.join("weights.csv"), &self.weights)?;
        }
        write_csv(&dir.join("timings.csv"), &self.timings)?;
        let summary = serde_json::to_string_pretty(&self.summary()).expect("summary serializes");
        fs::write(dir.join("run_summary.json"), summary + "\n").map_err(io)?;
        fs::write(dir.join("config.resolved.toml"), cfg.to_toml_string()).map_err(io)?;
        Ok(())
    }
}
