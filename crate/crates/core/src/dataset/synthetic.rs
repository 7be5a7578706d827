use chrono::{Datelike, NaiveDate, Weekday};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{DatasetError, PanelFrame};

/// Parameters of the synthetic price generator.
///
/// Prices follow `Y[d,h] = m_d*s_h + a*Y[d-1,h] + b*Z_d + v_d*sigma*eps + spike`
/// where `(m_d, v_d)` switch from `(1, 1)` to the shift multipliers at
/// `shift_day`, `Z_d` is an exogenous driver emitted as the `exo` feature and
/// spikes are positive exponential shocks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticConfig {
    pub n_days: usize,
    pub start_date: NaiveDate,
    pub hours: Vec<u8>,
    /// Per-hour level `s_h`, same length as `hours`.
    pub hourly_levels: Vec<f64>,
    pub ar_coef: f64,
    pub exo_coef: f64,
    pub noise_scale: f64,
    pub shift_day: Option<usize>,
    pub shift_mean_mult: f64,
    pub shift_scale_mult: f64,
    pub spike_prob: f64,
    pub spike_scale: f64,
    /// Overrides the simulated exogenous series; must hold `n_days` values.
    pub exo_series: Option<Vec<f64>>,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            n_days: 6 * 365,
            start_date: NaiveDate::from_ymd_opt(2016, 1, 11).expect("valid date"),
            hours: vec![3, 8, 13, 18, 23],
            hourly_levels: vec![30.0, 38.0, 36.0, 45.0, 40.0],
            ar_coef: 0.5,
            exo_coef: 4.0,
            noise_scale: 5.0,
            shift_day: None,
            shift_mean_mult: 1.0,
            shift_scale_mult: 1.0,
            spike_prob: 0.0,
            spike_scale: 20.0,
            exo_series: None,
            seed: 0,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<(), DatasetError> {
        let err = |m: &str| Err(DatasetError::Config(m.to_string()));
        if self.n_days == 0 {
            return err("n_days must be positive");
        }
        if self.hours.is_empty() || self.hours.len() != self.hourly_levels.len() {
            return err("hours and hourly_levels must be non-empty and of equal length");
        }
        if !(self.ar_coef.abs() < 1.0) {
            return err("ar_coef must satisfy |a| < 1");
        }
        if !(self.noise_scale > 0.0) {
            return err("noise_scale must be > 0");
        }
        if let Some(d) = self.shift_day {
            if d > self.n_days {
                return err("shift_day must lie in [0, n_days]");
            }
        }
        if !(self.shift_mean_mult > 0.0 && self.shift_scale_mult > 0.0) {
            return err("shift multipliers must be > 0");
        }
        if !(0.0..1.0).contains(&self.spike_prob) {
            return err("spike_prob must lie in [0, 1)");
        }
        if !(self.spike_scale > 0.0) {
            return err("spike_scale must be > 0");
        }
        if let Some(z) = &self.exo_series {
            if z.len() != self.n_days || z.iter().any(|v| !v.is_finite()) {
                return err("exo_series must hold n_days finite values");
            }
        }
        if !self.exo_coef.is_finite() || self.hourly_levels.iter().any(|v| !v.is_finite()) {
            return err("coefficients must be finite");
        }
        Ok(())
    }
}

/// Feature columns emitted by [`generate_synthetic`].
pub const SYNTHETIC_FEATURES: [&str; 5] = ["exo", "sin_doy", "cos_doy", "weekend", "clock"];

/// Generates a panel from `cfg`. Pure function of the config.
pub fn generate_synthetic(cfg: &SyntheticConfig) -> Result<PanelFrame, DatasetError> {
    cfg.validate()?;
    let mut hour_order: Vec<(u8, f64)> = cfg
        .hours
        .iter()
        .copied()
        .zip(cfg.hourly_levels.iter().copied())
        .collect();
    hour_order.sort_by_key(|(h, _)| *h);
    let hours: Vec<u8> = hour_order.iter().map(|(h, _)| *h).collect();
    let levels: Vec<f64> = hour_order.iter().map(|(_, s)| *s).collect();
    let nh = hours.len();
    let nf = SYNTHETIC_FEATURES.len();

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let spike = Exp::new(1.0 / cfg.spike_scale)
        .map_err(|e| DatasetError::Config(format!("spike_scale: {e}")))?;

    let days: Vec<NaiveDate> = cfg.start_date.iter_days().take(cfg.n_days).collect();
    let mut price = Vec::with_capacity(cfg.n_days * nh);
    let mut features = Vec::with_capacity(cfg.n_days * nh * nf);
    let mut prev: Vec<f64> = levels.iter().map(|s| s / (1.0 - cfg.ar_coef)).collect();
    let mut z = 0.0f64;
    let rho = 0.8f64;

    for (d, day) in days.iter().enumerate() {
        let shifted = cfg.shift_day.is_some_and(|s| d >= s);
        let (m, v) = if shifted {
            (cfg.shift_mean_mult, cfg.shift_scale_mult)
        } else {
            (1.0, 1.0)
        };
        z = match &cfg.exo_series {
            Some(series) => series[d],
            None => {
                let e: f64 = rng.sample(StandardNormal);
                rho * z + (1.0 - rho * rho).sqrt() * e
            }
        };
        let doy = f64::from(day.ordinal0()) / 365.25 * std::f64::consts::TAU;
        let weekend = matches!(day.weekday(), Weekday::Sat | Weekday::Sun);
        let calendar = [
            z,
            doy.sin(),
            doy.cos(),
            if weekend { 1.0 } else { 0.0 },
            d as f64 / 365.25,
        ];
        for h in 0..nh {
            let eps: f64 = rng.sample(StandardNormal);
            let u: f64 = rng.random();
            let jump = if u < cfg.spike_prob {
                spike.sample(&mut rng)
            } else {
                0.0
            };
            let y = m * levels[h]
                + cfg.ar_coef * prev[h]
                + cfg.exo_coef * z
                + v * cfg.noise_scale * eps
                + jump;
            prev[h] = y;
            price.push(y);
            features.extend_from_slice(&calendar);
        }
    }
    let cells = price.len();
    PanelFrame::new(
        days,
        hours,
        SYNTHETIC_FEATURES.iter().map(|s| s.to_string()).collect(),
        price,
        features,
        vec![true; cells],
    )
}
