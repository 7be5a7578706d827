use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use super::{DatasetError, FeatureAvailability, PanelFrame};

/// Provenance of one design-matrix column, kept so the no-lookahead property
/// can be audited after construction.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum ColumnSource {
    /// Price of `hour` observed `lag` days before the target day.
    PriceLag { hour: u8, lag: usize },
    /// Panel feature published for the target day ahead of the auction.
    Exogenous {
        name: String,
        availability: FeatureAvailability,
    },
}

impl ColumnSource {
    /// True when the value is known before the auction for the target day.
    pub fn is_causal(&self) -> bool {
        match self {
            Self::PriceLag { lag, .. } => *lag >= 1,
            Self::Exogenous { availability, .. } => {
                matches!(availability, FeatureAvailability::DayAhead)
            }
        }
    }

    pub fn label(&self) -> String {
        match self {
            Self::PriceLag { hour, lag } => format!("price_h{hour}_lag{lag}"),
            Self::Exogenous { name, .. } => name.clone(),
        }
    }
}

/// One model per hour: the design matrix and target for a fixed delivery hour.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupervisedSeries {
    pub hour: u8,
    pub max_lag: usize,
    /// Panel day index of each row.
    pub day_index: Vec<usize>,
    pub days: Vec<NaiveDate>,
    pub columns: Vec<ColumnSource>,
    pub x: Vec<Vec<f64>>,
    pub y: Vec<f64>,
}

impl SupervisedSeries {
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.columns.len()
    }

    /// Index of the first row whose day is on or after `day`.
    pub fn first_row_on_or_after(&self, day: NaiveDate) -> usize {
        self.days.partition_point(|d| *d < day)
    }

    pub fn is_causal(&self) -> bool {
        self.columns.iter().all(ColumnSource::is_causal)
    }
}

/// Builds the supervised series for `hour`.
///
/// Columns are the prices of every panel hour at each requested day lag,
/// followed by the panel features of the target cell. Target days whose
/// inputs touch an invalid cell are dropped.
pub fn hour_slice_design(
    panel: &PanelFrame,
    hour: u8,
    lags: &[usize],
) -> Result<SupervisedSeries, DatasetError> {
    let h_idx = panel.hour_index(hour).ok_or(DatasetError::HourAbsent(hour))?;
    let mut lags = lags.to_vec();
    lags.sort_unstable();
    lags.dedup();
    if lags.first() == Some(&0) {
        return Err(DatasetError::InvalidPanel("lags must be positive".into()));
    }
    let max_lag = lags.last().copied().unwrap_or(0);
    if panel.n_days() <= max_lag {
        return Err(DatasetError::TooShort {
            days: panel.n_days(),
            max_lag,
        });
    }
    let nh = panel.hours().len();
    let mut columns = Vec::with_capacity(lags.len() * nh + panel.feature_names().len());
    for &lag in &lags {
        for &h in panel.hours() {
            columns.push(ColumnSource::PriceLag { hour: h, lag });
        }
    }
    for (name, avail) in panel
        .feature_names()
        .iter()
        .zip(panel.feature_availability())
    {
        columns.push(ColumnSource::Exogenous {
            name: name.clone(),
            availability: *avail,
        });
    }

    let mut series = SupervisedSeries {
        hour,
        max_lag,
        day_index: Vec::new(),
        days: Vec::new(),
        columns,
        x: Vec::new(),
        y: Vec::new(),
    };
    'days: for d in max_lag..panel.n_days() {
        if !panel.is_valid(d, h_idx) {
            continue;
        }
        let mut row = Vec::with_capacity(series.columns.len());
        for &lag in &lags {
            for h in 0..nh {
                if !panel.is_valid(d - lag, h) {
                    continue 'days;
                }
                row.push(panel.price(d - lag, h));
            }
        }
        row.extend_from_slice(panel.features(d, h_idx));
        series.day_index.push(d);
        series.days.push(panel.days()[d]);
        series.x.push(row);
        series.y.push(panel.price(d, h_idx));
    }
    Ok(series)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{generate_synthetic, SyntheticConfig};

    fn panel(n_days: usize, hours: Vec<u8>) -> PanelFrame {
        let levels = vec![10.0; hours.len()];
        generate_synthetic(&SyntheticConfig {
            n_days,
            hours,
            hourly_levels: levels,
            ..SyntheticConfig::default()
        })
        .unwrap()
    }

    #[test]
    fn lags_one_and_seven_consume_seven_days() {
        let p = panel(100, vec![3, 8]);
        let s = hour_slice_design(&p, 8, &[1, 7]).unwrap();
        assert_eq!(s.len(), 93);
        assert_eq!(s.day_index[0], 7);
        assert_eq!(s.max_lag, 7);
        assert_eq!(s.n_features(), 2 * 2 + 5);
        // row 0 targets day 7: lag-1 block is day 6, lag-7 block is day 0
        assert_eq!(s.x[0][0], p.price(6, 0));
        assert_eq!(s.x[0][1], p.price(6, 1));
        assert_eq!(s.x[0][2], p.price(0, 0));
        assert_eq!(s.x[0][4..], *p.features(7, 1));
        assert_eq!(s.y[0], p.price(7, 1));
        assert!(s.is_causal());
    }

    #[test]
    fn empty_lag_set_keeps_every_day() {
        let p = panel(100, vec![3, 8]);
        let s = hour_slice_design(&p, 3, &[]).unwrap();
        assert_eq!(s.len(), 100);
        assert_eq!(s.n_features(), 5);
        assert_eq!(s.x[10], p.features(10, 0));
    }

    #[test]
    fn absent_hour_and_short_panel_error() {
        let p = panel(100, vec![3, 8]);
        assert!(matches!(hour_slice_design(&p, 5, &[1]), Err(DatasetError::HourAbsent(5))));
        let short = panel(7, vec![3]);
        assert!(matches!(
            hour_slice_design(&short, 3, &[1, 7]),
            Err(DatasetError::TooShort { .. })
        ));
        assert!(hour_slice_design(&short, 3, &[0]).is_err());
    }

    #[test]
    fn lag_columns_are_strictly_past() {
        let p = panel(30, vec![3, 8, 13]);
        let s = hour_slice_design(&p, 13, &[1, 2, 7]).unwrap();
        for (r, &d) in s.day_index.iter().enumerate() {
            for (c, src) in s.columns.iter().enumerate() {
                if let ColumnSource::PriceLag { hour, lag } = src {
                    let h = p.hour_index(*hour).unwrap();
                    assert!(*lag >= 1);
                    assert_eq!(s.x[r][c], p.price(d - lag, h));
                }
            }
        }
    }
}
