//! Rolling train/calibration machinery shared by the conformal wrappers.

use serde::{Deserialize, Serialize};

use super::{cqr_score, ConformalError, ScoreWindow};
use crate::dataset::split::split_sizes;
use crate::models::{BaseLearner, QuantileLevel, QuantilePair};

/// How calibration scores are produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SourceSpec {
    /// Sequential split of the last `window` points, slid by one each step.
    /// `refit_every = 0` keeps the initial pair forever.
    Osscp {
        window: usize,
        cal_frac: f64,
        #[serde(default = "one")]
        refit_every: usize,
    },
    /// Each calibration score is a horizon-`horizon` error from a pair fitted
    /// on the training window preceding that calibration point.
    Horizon {
        window: usize,
        cal_frac: f64,
        #[serde(default = "one")]
        horizon: usize,
    },
}

fn one() -> usize {
    1
}

impl SourceSpec {
    pub fn window(&self) -> usize {
        match self {
            Self::Osscp { window, .. } | Self::Horizon { window, .. } => *window,
        }
    }

    pub fn cal_frac(&self) -> f64 {
        match self {
            Self::Osscp { cal_frac, .. } | Self::Horizon { cal_frac, .. } => *cal_frac,
        }
    }

    /// `(train_len, cal_len)`.
    pub fn sizes(&self) -> Result<(usize, usize), ConformalError> {
        let f = self.cal_frac();
        if !(f > 0.0 && f < 1.0) {
            return Err(ConformalError::Config(format!("cal_frac must lie in (0, 1), got {f}")));
        }
        let sizes = split_sizes(self.window(), f)?;
        if let Self::Horizon { horizon, .. } = self {
            if *horizon == 0 || *horizon >= sizes.0 {
                return Err(ConformalError::Config(format!(
                    "horizon {horizon} must lie in [1, {}) for a training window of {}",
                    sizes.0, sizes.0
                )));
            }
        }
        Ok(sizes)
    }

    /// Past observations needed before the first forecast.
    pub fn required_history(&self) -> Result<usize, ConformalError> {
        self.sizes().map(|(t, c)| t + c)
    }
}

fn check_history(x: &[Vec<f64>], y: &[f64], required: usize) -> Result<(), ConformalError> {
    if x.len() != y.len() {
        return Err(ConformalError::Config(format!(
            "history has {} rows but {} targets",
            x.len(),
            y.len()
        )));
    }
    if y.len() < required {
        return Err(ConformalError::InsufficientHistory {
            required,
            available: y.len(),
        });
    }
    Ok(())
}

/// Rolling sequential split: the pair is fitted on the training block and the
/// calibration block is scored under the pair currently in use.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OsscpSource {
    learner: BaseLearner,
    lo: QuantileLevel,
    hi: QuantileLevel,
    train_len: usize,
    cal_len: usize,
    refit_every: usize,
    xs: Vec<Vec<f64>>,
    ys: Vec<f64>,
    pair: QuantilePair,
    scores: ScoreWindow,
    since_refit: usize,
    fits: usize,
}

impl OsscpSource {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        learner: BaseLearner,
        lo: QuantileLevel,
        hi: QuantileLevel,
        train_len: usize,
        cal_len: usize,
        refit_every: usize,
        hist_x: &[Vec<f64>],
        hist_y: &[f64],
    ) -> Result<Self, ConformalError> {
        if train_len == 0 {
            return Err(ConformalError::Config("training window is empty".into()));
        }
        let window = train_len + cal_len;
        check_history(hist_x, hist_y, window)?;
        let start = hist_y.len() - window;
        let xs = hist_x[start..].to_vec();
        let ys = hist_y[start..].to_vec();
        let pair = QuantilePair::fit(&learner, &xs[..train_len], &ys[..train_len], lo, hi, None)?;
        let mut src = Self {
            learner,
            lo,
            hi,
            train_len,
            cal_len,
            refit_every,
            xs,
            ys,
            pair,
            scores: ScoreWindow::new(cal_len),
            since_refit: 0,
            fits: 1,
        };
        src.rescore()?;
        Ok(src)
    }

    fn rescore(&mut self) -> Result<(), ConformalError> {
        let mut fresh = Vec::with_capacity(self.cal_len);
        for (x, y) in self.xs[self.train_len..].iter().zip(&self.ys[self.train_len..]) {
            let (a, b) = self.pair.predict(x)?;
            fresh.push(cqr_score(*y, a, b)?);
        }
        self.scores.replace(fresh);
        Ok(())
    }

    pub fn predict(&self, x: &[f64]) -> Result<(f64, f64), ConformalError> {
        Ok(self.pair.predict(x)?)
    }

    pub fn scores(&self) -> &ScoreWindow {
        &self.scores
    }

    pub fn fits(&self) -> usize {
        self.fits
    }

    pub fn pair(&self) -> &QuantilePair {
        &self.pair
    }

    pub fn update(&mut self, x: &[f64], y: f64) -> Result<(), ConformalError> {
        self.xs.remove(0);
        self.ys.remove(0);
        self.xs.push(x.to_vec());
        self.ys.push(y);
        self.since_refit += 1;
        if self.refit_every > 0 && self.since_refit >= self.refit_every {
            let n = self.train_len;
            self.pair = QuantilePair::fit(
                &self.learner,
                &self.xs[..n],
                &self.ys[..n],
                self.lo,
                self.hi,
                Some(&self.pair),
            )?;
            self.fits += 1;
            self.since_refit = 0;
            self.rescore()
        } else if self.cal_len > 0 {
            // same pair: only the entering point needs a score
            let (a, b) = self.pair.predict(x)?;
            self.scores.push(cqr_score(y, a, b)?);
            Ok(())
        } else {
            Ok(())
        }
    }
}

/// Horizon-consistent calibration: the score for target `s` comes from a pair
/// fitted on `[s - train_len, s - horizon]`, and the forecast for the next
/// target uses the pair fitted on the most recent such window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HorizonSource {
    learner: BaseLearner,
    lo: QuantileLevel,
    hi: QuantileLevel,
    train_len: usize,
    cal_len: usize,
    horizon: usize,
    /// The last `train_len` observations.
    xs: Vec<Vec<f64>>,
    ys: Vec<f64>,
    /// Pairs for the next `horizon` targets, nearest first.
    queue: Vec<QuantilePair>,
    scores: ScoreWindow,
    warmup_fits: usize,
    fits: usize,
}

impl HorizonSource {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        learner: BaseLearner,
        lo: QuantileLevel,
        hi: QuantileLevel,
        train_len: usize,
        cal_len: usize,
        horizon: usize,
        hist_x: &[Vec<f64>],
        hist_y: &[f64],
    ) -> Result<Self, ConformalError> {
        if horizon == 0 || horizon >= train_len {
            return Err(ConformalError::Config(format!(
                "horizon {horizon} must lie in [1, {train_len})"
            )));
        }
        check_history(hist_x, hist_y, train_len + cal_len)?;
        let n = hist_y.len();
        let fit_for = |target: usize, warm: Option<&QuantilePair>| {
            let (a, b) = (target - train_len, target - horizon + 1);
            QuantilePair::fit(&learner, &hist_x[a..b], &hist_y[a..b], lo, hi, warm)
        };
        let mut scores = ScoreWindow::new(cal_len);
        let mut last: Option<QuantilePair> = None;
        let mut fits = 0;
        for s in n - cal_len..n {
            let pair = fit_for(s, last.as_ref())?;
            fits += 1;
            let (a, b) = pair.predict(&hist_x[s])?;
            scores.push(cqr_score(hist_y[s], a, b)?);
            last = Some(pair);
        }
        let mut queue = Vec::with_capacity(horizon);
        for j in 0..horizon {
            let pair = fit_for(n + j, last.as_ref())?;
            fits += 1;
            last = Some(pair.clone());
            queue.push(pair);
        }
        Ok(Self {
            learner: learner.clone(),
            lo,
            hi,
            train_len,
            cal_len,
            horizon,
            xs: hist_x[n - train_len..].to_vec(),
            ys: hist_y[n - train_len..].to_vec(),
            queue,
            scores,
            warmup_fits: fits,
            fits,
        })
    }

    pub fn predict(&self, x: &[f64]) -> Result<(f64, f64), ConformalError> {
        Ok(self.queue[0].predict(x)?)
    }

    pub fn scores(&self) -> &ScoreWindow {
        &self.scores
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    /// Fits performed during construction.
    pub fn warmup_fits(&self) -> usize {
        self.warmup_fits
    }

    pub fn fits(&self) -> usize {
        self.fits
    }

    pub fn update(&mut self, x: &[f64], y: f64) -> Result<(), ConformalError> {
        let used = self.queue.remove(0);
        let (a, b) = used.predict(x)?;
        self.scores.push(cqr_score(y, a, b)?);
        self.xs.remove(0);
        self.ys.remove(0);
        self.xs.push(x.to_vec());
        self.ys.push(y);
        // target T + h uses [T + h - train_len, T]: the newest train_len - h + 1 points
        let start = self.horizon - 1;
        let warm = self.queue.last().unwrap_or(&used);
        let pair = QuantilePair::fit(
            &self.learner,
            &self.xs[start..],
            &self.ys[start..],
            self.lo,
            self.hi,
            Some(warm),
        )?;
        self.queue.push(pair);
        self.fits += 1;
        Ok(())
    }
}

/// Either calibration scheme behind one interface.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum CalibrationSource {
    Osscp(OsscpSource),
    Horizon(HorizonSource),
}

impl CalibrationSource {
    /// Builds the source for target coverage `1 - alpha`, fitting quantiles
    /// at `alpha / 2` and `1 - alpha / 2` on the tail of the history.
    pub fn build(
        spec: &SourceSpec,
        learner: &BaseLearner,
        alpha: f64,
        hist_x: &[Vec<f64>],
        hist_y: &[f64],
    ) -> Result<Self, ConformalError> {
        let (lo, hi) = pair_levels(alpha)?;
        let (train_len, cal_len) = spec.sizes()?;
        Ok(match spec {
            SourceSpec::Osscp { refit_every, .. } => Self::Osscp(OsscpSource::new(
                learner.clone(),
                lo,
                hi,
                train_len,
                cal_len,
                *refit_every,
                hist_x,
                hist_y,
            )?),
            SourceSpec::Horizon { horizon, .. } => Self::Horizon(HorizonSource::new(
                learner.clone(),
                lo,
                hi,
                train_len,
                cal_len,
                *horizon,
                hist_x,
                hist_y,
            )?),
        })
    }

    pub fn predict(&self, x: &[f64]) -> Result<(f64, f64), ConformalError> {
        match self {
            Self::Osscp(s) => s.predict(x),
            Self::Horizon(s) => s.predict(x),
        }
    }

    pub fn scores(&self) -> &ScoreWindow {
        match self {
            Self::Osscp(s) => s.scores(),
            Self::Horizon(s) => s.scores(),
        }
    }

    pub fn fits(&self) -> usize {
        match self {
            Self::Osscp(s) => s.fits(),
            Self::Horizon(s) => s.fits(),
        }
    }

    pub fn update(&mut self, x: &[f64], y: f64) -> Result<(), ConformalError> {
        match self {
            Self::Osscp(s) => s.update(x, y),
            Self::Horizon(s) => s.update(x, y),
        }
    }
}

/// Quantile levels `(alpha / 2, 1 - alpha / 2)`.
pub(crate) fn pair_levels(alpha: f64) -> Result<(QuantileLevel, QuantileLevel), ConformalError> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(ConformalError::InvalidAlpha(alpha));
    }
    Ok((
        QuantileLevel::new(alpha / 2.0)?,
        QuantileLevel::new(1.0 - alpha / 2.0)?,
    ))
}
