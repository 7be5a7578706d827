use std::collections::HashSet;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use super::DatasetError;

/// When a feature value becomes known relative to the delivery day.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FeatureAvailability {
    /// Published before the day-ahead auction closes on d-1 (forecasts,
    /// announced nuclear availability, calendar terms, lagged observations
    /// that the data provider has already aligned to the delivery day).
    DayAhead,
}

/// Day x hour panel of prices and exogenous features.
///
/// Cells are stored densely over a contiguous calendar. A cell with no valid
/// source row is flagged invalid and holds NaN.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PanelFrame {
    days: Vec<NaiveDate>,
    hours: Vec<u8>,
    feature_names: Vec<String>,
    feature_availability: Vec<FeatureAvailability>,
    price: Vec<f64>,
    features: Vec<f64>,
    valid: Vec<bool>,
}

impl PanelFrame {
    /// Builds a panel from dense day-major buffers.
    ///
    /// `price` and `valid` hold `days.len() * hours.len()` cells; `features`
    /// holds `feature_names.len()` values per cell.
    pub fn new(
        days: Vec<NaiveDate>,
        hours: Vec<u8>,
        feature_names: Vec<String>,
        price: Vec<f64>,
        features: Vec<f64>,
        valid: Vec<bool>,
    ) -> Result<Self, DatasetError> {
        let cells = days.len() * hours.len();
        if days.windows(2).any(|w| w[0] >= w[1]) {
            return Err(DatasetError::InvalidPanel("days must be strictly increasing".into()));
        }
        if hours.windows(2).any(|w| w[0] >= w[1]) || hours.iter().any(|&h| h > 23) {
            return Err(DatasetError::InvalidPanel(
                "hours must be strictly increasing values in 0..=23".into(),
            ));
        }
        let unique: HashSet<&String> = feature_names.iter().collect();
        if unique.len() != feature_names.len() {
            return Err(DatasetError::InvalidPanel("feature names must be unique".into()));
        }
        if price.len() != cells
            || valid.len() != cells
            || features.len() != cells * feature_names.len()
        {
            return Err(DatasetError::InvalidPanel("buffer sizes do not match the shape".into()));
        }
        let nf = feature_names.len();
        for c in 0..cells {
            if valid[c]
                && (!price[c].is_finite()
                    || features[c * nf..(c + 1) * nf].iter().any(|v| !v.is_finite()))
            {
                return Err(DatasetError::InvalidPanel(format!(
                    "cell {c} is flagged valid but holds a non-finite value"
                )));
            }
        }
        let feature_availability = vec![FeatureAvailability::DayAhead; nf];
        Ok(Self {
            days,
            hours,
            feature_names,
            feature_availability,
            price,
            features,
            valid,
        })
    }

    pub fn days(&self) -> &[NaiveDate] {
        &self.days
    }

    pub fn hours(&self) -> &[u8] {
        &self.hours
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn feature_availability(&self) -> &[FeatureAvailability] {
        &self.feature_availability
    }

    pub fn n_days(&self) -> usize {
        self.days.len()
    }

    pub fn hour_index(&self, hour: u8) -> Option<usize> {
        self.hours.iter().position(|&h| h == hour)
    }

    fn cell(&self, day: usize, hour_idx: usize) -> usize {
        day * self.hours.len() + hour_idx
    }

    pub fn is_valid(&self, day: usize, hour_idx: usize) -> bool {
        self.valid[self.cell(day, hour_idx)]
    }

    pub fn price(&self, day: usize, hour_idx: usize) -> f64 {
        self.price[self.cell(day, hour_idx)]
    }

    pub fn features(&self, day: usize, hour_idx: usize) -> &[f64] {
        let nf = self.feature_names.len();
        let c = self.cell(day, hour_idx);
        &self.features[c * nf..(c + 1) * nf]
    }

    pub fn n_valid(&self) -> usize {
        self.valid.iter().filter(|v| **v).count()
    }
}
