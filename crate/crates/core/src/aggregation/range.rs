use serde::{Deserialize, Serialize};

use super::{AggregationError, ClipBound};
use crate::stats;

/// Running summary of observed targets that supplies the clip bound
/// `[min - R, max + R]`, with `R` the interquartile range of everything seen.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunningRange {
    sorted: Vec<f64>,
}

impl RunningRange {
    pub fn new(initial: &[f64]) -> Self {
        let mut r = Self { sorted: Vec::with_capacity(initial.len()) };
        for &v in initial {
            r.push(v);
        }
        r
    }

    /// Non-finite values are ignored.
    pub fn push(&mut self, v: f64) {
        if v.is_finite() {
            stats::sorted_insert(&mut self.sorted, v);
        }
    }

    pub fn len(&self) -> usize {
        self.sorted.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sorted.is_empty()
    }

    pub fn bound(&self) -> Result<ClipBound, AggregationError> {
        let (Some(&min), Some(&max)) = (self.sorted.first(), self.sorted.last()) else {
            return Err(AggregationError::Config("clip bound needs at least one observed target".into()));
        };
        let q1 = stats::interpolated_quantile_sorted(&self.sorted, 0.25).expect("non-empty");
        let q3 = stats::interpolated_quantile_sorted(&self.sorted, 0.75).expect("non-empty");
        let mut r = q3 - q1;
        if r <= 0.0 {
            r = max - min;
        }
        if r <= 0.0 {
            r = max.abs().max(1.0);
        }
        ClipBound::new(min - r, max + r)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bound_from_quartiles() {
        let r = RunningRange::new(&[1.0, 2.0, 3.0, 4.0, 5.0]);
        let b = r.bound().unwrap();
        assert_eq!((b.lo, b.hi), (-1.0, 7.0));
    }

    #[test]
    fn degenerate_spreads_fall_back() {
        let r = RunningRange::new(&[0.0, 0.0, 0.0, 0.0, 0.0, 10.0]);
        let b = r.bound().unwrap();
        assert_eq!((b.lo, b.hi), (-10.0, 20.0));
        let c = RunningRange::new(&[-3.0, -3.0]).bound().unwrap();
        assert_eq!((c.lo, c.hi), (-6.0, 0.0));
        let z = RunningRange::new(&[0.0]).bound().unwrap();
        assert_eq!((z.lo, z.hi), (-1.0, 1.0));
        assert!(RunningRange::new(&[]).bound().is_err());
    }

    #[test]
    fn grows_with_observations() {
        let mut r = RunningRange::new(&[0.0, 1.0]);
        let before = r.bound().unwrap();
        r.push(50.0);
        r.push(f64::INFINITY);
        assert_eq!(r.len(), 3);
        let after = r.bound().unwrap();
        assert!(after.hi > before.hi);
    }
}
