use std::ops::Range;

use serde::{Deserialize, Serialize};

use super::DatasetError;

/// Sequential train/calibration split: every training index precedes every
/// calibration index. Indices are 0-based and half-open.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitIndices {
    pub train: Range<usize>,
    pub cal: Range<usize>,
}

impl SplitIndices {
    pub fn train_len(&self) -> usize {
        self.train.len()
    }

    pub fn cal_len(&self) -> usize {
        self.cal.len()
    }
}

/// Splits the `window` observations preceding `t_pred` into a training block
/// followed by a calibration block of `floor(window * cal_frac)` points.
///
/// `n_obs` is the number of observations available; `t_pred` may equal it
/// (predicting the next, not yet observed, index).
pub fn sequential_split(
    n_obs: usize,
    t_pred: usize,
    window: usize,
    cal_frac: f64,
) -> Result<SplitIndices, DatasetError> {
    if !(cal_frac > 0.0 && cal_frac < 1.0) {
        return Err(DatasetError::InvalidSplit(format!(
            "cal_frac must lie in (0, 1), got {cal_frac}"
        )));
    }
    if t_pred > n_obs {
        return Err(DatasetError::InsufficientHistory {
            required: t_pred,
            available: n_obs,
        });
    }
    if window > t_pred {
        return Err(DatasetError::InsufficientHistory {
            required: window,
            available: t_pred,
        });
    }
    let (train_len, cal_len) = split_sizes(window, cal_frac)?;
    let start = t_pred - window;
    Ok(SplitIndices {
        train: start..start + train_len,
        cal: start + train_len..start + train_len + cal_len,
    })
}

/// Returns `(train_len, cal_len)` for a window, rejecting empty parts.
pub(crate) fn split_sizes(window: usize, cal_frac: f64) -> Result<(usize, usize), DatasetError> {
    let raw = window as f64 * cal_frac;
    let cal_len = (raw + 1e-9 * raw.max(1.0)).floor() as usize;
    if cal_len < 1 {
        return Err(DatasetError::InvalidSplit(format!(
            "window {window} with cal_frac {cal_frac} leaves no calibration point"
        )));
    }
    if cal_len >= window {
        return Err(DatasetError::InvalidSplit(format!(
            "window {window} with cal_frac {cal_frac} leaves no training point"
        )));
    }
    Ok((window - cal_len, cal_len))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    // Examples below are quoted with 1-based inclusive ranges in comments;
    // t_pred = 101 (1-based) is index 100 here.

    #[test]
    fn half_calibration() {
        // train = [21..60], cal = [61..100]
        let s = sequential_split(100, 100, 80, 0.5).unwrap();
        assert_eq!(s.train, 20..60);
        assert_eq!(s.cal, 60..100);
    }

    #[test]
    fn quarter_calibration() {
        // cal = [81..100] (20 points), train = [21..80]
        let s = sequential_split(100, 100, 80, 0.25).unwrap();
        assert_eq!(s.cal, 80..100);
        assert_eq!(s.cal_len(), 20);
        assert_eq!(s.train, 20..80);
    }

    #[test]
    fn insufficient_history() {
        // t_pred = 50 (1-based) has 49 observations before it
        match sequential_split(49, 49, 80, 0.5) {
            Err(DatasetError::InsufficientHistory { required, available }) => {
                assert_eq!((required, available), (80, 49));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn bad_fractions_and_empty_parts() {
        for f in [0.0, 1.0, -0.1, 1.5, f64::NAN] {
            assert!(matches!(
                sequential_split(100, 100, 80, f),
                Err(DatasetError::InvalidSplit(_))
            ));
        }
        assert!(sequential_split(100, 100, 3, 0.25).is_err());
        assert!(sequential_split(100, 100, 1, 0.5).is_err());
        let s = sequential_split(100, 100, 2, 0.75).unwrap();
        assert_eq!((s.train_len(), s.cal_len()), (1, 1));
        let s = sequential_split(100, 100, 4, 0.25).unwrap();
        assert_eq!((s.train_len(), s.cal_len()), (3, 1));
    }

    proptest! {
        #[test]
        fn split_is_contiguous_and_anchored(
            t_pred in 2usize..2000,
            window_frac in 0.0f64..1.0,
            cal_frac in 0.01f64..0.99,
        ) {
            let window = ((t_pred as f64 * window_frac) as usize).max(2);
            prop_assume!(window <= t_pred);
            if let Ok(s) = sequential_split(t_pred, t_pred, window, cal_frac) {
                prop_assert_eq!(s.train.end, s.cal.start);
                prop_assert_eq!(s.train.start, t_pred - window);
                prop_assert_eq!(s.cal.end, t_pred);
                prop_assert!(s.train_len() >= 1 && s.cal_len() >= 1);
                prop_assert_eq!(s.cal_len(), (window as f64 * cal_frac + 1e-9 * (window as f64 * cal_frac).max(1.0)).floor() as usize);
            }
        }
    }
}
