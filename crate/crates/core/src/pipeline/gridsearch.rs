use std::collections::BTreeMap;
use std::path::Path;

use chrono::NaiveDate;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::backtest::load_panel;
use super::config::{CandidateGrid, RunConfig};
use super::report::SCHEMA_VERSION;
use super::PipelineError;
use crate::dataset::{hour_slice_design, PanelFrame};
use crate::models::{BaseLearner, GbHyper, QuantileLevel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateScore {
    pub learner: BaseLearner,
    /// Mean validation pinball loss over hours and quantile levels.
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSelection {
    pub candidates: Vec<CandidateScore>,
    pub selected: usize,
    pub learner: BaseLearner,
}

/// Contents of `selection.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionReport {
    pub schema_version: u32,
    pub run_id: String,
    pub train_start: NaiveDate,
    pub validation_start: NaiveDate,
    pub validation_end: NaiveDate,
    pub quantile_levels: Vec<f64>,
    pub models: BTreeMap<String, ModelSelection>,
}

impl SelectionReport {
    pub fn write(&self, path: &Path) -> Result<(), PipelineError> {
        let text = serde_json::to_string_pretty(self).expect("report serializes");
        std::fs::write(path, text + "\n").map_err(|e| PipelineError::Io(format!("{}: {e}", path.display())))
    }
}

fn or_current<T: Clone>(grid: &[T], current: T) -> Vec<T> {
    if grid.is_empty() {
        vec![current]
    } else {
        grid.to_vec()
    }
}

/// Cartesian product of the grid around `base`.
pub fn expand_grid(name: &str, base: &BaseLearner, grid: &CandidateGrid) -> Result<Vec<BaseLearner>, PipelineError> {
    let boosting_fields = !(grid.n_estimators.is_empty() && grid.max_depth.is_empty() && grid.learning_rate.is_empty());
    match base {
        BaseLearner::Linear { lambda, options } => {
            if boosting_fields {
                return Err(PipelineError::Config(format!("grid `{name}` sets boosting fields on a linear model")));
            }
            if grid.lambda.is_empty() {
                return Err(PipelineError::Config(format!("grid `{name}` is empty")));
            }
            if let Some(l) = grid.lambda.iter().find(|l| !(**l >= 0.0 && l.is_finite())) {
                return Err(PipelineError::Config(format!("grid `{name}`: invalid lambda {l}")));
            }
            Ok(or_current(&grid.lambda, *lambda)
                .into_iter()
                .map(|lambda| BaseLearner::Linear {
                    lambda,
                    options: options.clone(),
                })
                .collect())
        }
        BaseLearner::Boosting(h) => {
            if !grid.lambda.is_empty() {
                return Err(PipelineError::Config(format!("grid `{name}` sets lambda on a boosting model")));
            }
            if !boosting_fields {
                return Err(PipelineError::Config(format!("grid `{name}` is empty")));
            }
            let mut out = Vec::new();
            for &n_estimators in &or_current(&grid.n_estimators, h.n_estimators) {
                for &max_depth in &or_current(&grid.max_depth, h.max_depth) {
                    for &learning_rate in &or_current(&grid.learning_rate, h.learning_rate) {
                        let c = GbHyper {
                            n_estimators,
                            max_depth,
                            learning_rate,
                            ..h.clone()
                        };
                        c.validate()?;
                        out.push(BaseLearner::Boosting(c));
                    }
                }
            }
            Ok(out)
        }
        BaseLearner::Constant => Err(PipelineError::Config(format!("model `{name}` has no hyperparameters"))),
    }
}

/// Preference among equally scored candidates: more shrinkage, fewer trees,
/// shallower trees. Smaller keys win.
fn simplicity_key(l: &BaseLearner) -> (f64, usize, usize) {
    match l {
        BaseLearner::Linear { lambda, .. } => (-lambda, 0, 0),
        BaseLearner::Boosting(h) => (0.0, h.n_estimators, h.max_depth),
        BaseLearner::Constant => (0.0, 0, 0),
    }
}

/// Index of the best candidate.
pub fn select(candidates: &[CandidateScore]) -> Option<usize> {
    (0..candidates.len()).min_by(|&a, &b| {
        let (ca, cb) = (&candidates[a], &candidates[b]);
        let (ka, kb) = (simplicity_key(&ca.learner), simplicity_key(&cb.learner));
        ca.score
            .total_cmp(&cb.score)
            .then(ka.0.total_cmp(&kb.0))
            .then(ka.1.cmp(&kb.1))
            .then(ka.2.cmp(&kb.2))
    })
}

/// Quantile levels implied by the target coverages: `alpha/2` and `1 - alpha/2`.
fn quantile_levels(levels: &[f64]) -> Vec<f64> {
    let mut q: Vec<f64> = levels
        .iter()
        .flat_map(|l| {
            let a = 1.0 - l;
            [a / 2.0, 1.0 - a / 2.0]
        })
        .collect();
    q.sort_by(f64::total_cmp);
    q.dedup();
    q
}

struct Split {
    x_train: Vec<Vec<f64>>,
    y_train: Vec<f64>,
    x_val: Vec<Vec<f64>>,
    y_val: Vec<f64>,
}

/// Fits every candidate on the training range and scores it on the
/// validation range.
pub fn grid_search_on(cfg: &RunConfig, panel: &PanelFrame) -> Result<SelectionReport, PipelineError> {
    cfg.validate()?;
    let gs = cfg
        .gridsearch
        .as_ref()
        .ok_or_else(|| PipelineError::Config("missing [gridsearch] section".into()))?;
    if gs.grids.is_empty() {
        return Err(PipelineError::Config("[gridsearch] lists no grids".into()));
    }
    let val_end = match gs.validation_end {
        Some(d) => d,
        None => cfg
            .run
            .test_start
            .pred_opt()
            .ok_or_else(|| PipelineError::Config("test_start has no previous day".into()))?,
    };
    if gs.validation_start > val_end || val_end >= cfg.run.test_start {
        return Err(PipelineError::Config(
            "validation range must be non-empty and end before test_start".into(),
        ));
    }
    let mut splits = Vec::new();
    let mut train_start = val_end;
    for &h in &cfg.run.hours {
        let s = hour_slice_design(panel, h, &cfg.data.lags)?;
        let v0 = s.first_row_on_or_after(gs.validation_start);
        let v1 = s.first_row_on_or_after(val_end.succ_opt().expect("date in range"));
        let t0 = gs.train_days.map_or(0, |n| v0.saturating_sub(n));
        if v0 == t0 || v1 == v0 {
            return Err(PipelineError::Config(format!("hour {h}: empty training or validation range")));
        }
        train_start = train_start.min(s.days[t0]);
        splits.push(Split {
            x_train: s.x[t0..v0].to_vec(),
            y_train: s.y[t0..v0].to_vec(),
            x_val: s.x[v0..v1].to_vec(),
            y_val: s.y[v0..v1].to_vec(),
        });
    }
    let q_levels = quantile_levels(&cfg.run.levels);
    let mut models = BTreeMap::new();
    for (name, grid) in &gs.grids {
        let base = cfg
            .models
            .get(name)
            .ok_or_else(|| PipelineError::Config(format!("grid `{name}` has no [models.{name}] entry")))?;
        let learners = expand_grid(name, base, grid)?;
        let candidates = learners
            .into_par_iter()
            .map(|learner| {
                let mut total = 0.0;
                let mut count = 0usize;
                for sp in &splits {
                    for &q in &q_levels {
                        let level = QuantileLevel::new(q)?;
                        let m = learner.fit(&sp.x_train, &sp.y_train, level, None)?;
                        for (x, y) in sp.x_val.iter().zip(&sp.y_val) {
                            total += crate::models::pinball_loss(*y, m.predict(x)?, level);
                        }
                        count += sp.y_val.len();
                    }
                }
                Ok(CandidateScore {
                    learner,
                    score: total / count as f64,
                })
            })
            .collect::<Result<Vec<_>, PipelineError>>()?;
        let selected = select(&candidates).expect("non-empty grid");
        models.insert(
            name.clone(),
            ModelSelection {
                learner: candidates[selected].learner.clone(),
                selected,
                candidates,
            },
        );
    }
    Ok(SelectionReport {
        schema_version: SCHEMA_VERSION,
        run_id: cfg.run_id(),
        train_start,
        validation_start: gs.validation_start,
        validation_end: val_end,
        quantile_levels: q_levels,
        models,
    })
}

pub fn grid_search(cfg: &RunConfig) -> Result<SelectionReport, PipelineError> {
    cfg.validate()?;
    let panel = load_panel(cfg)?;
    grid_search_on(cfg, &panel)
}
