//! Small order-statistic helpers shared across modules.

use std::cmp::Ordering;

/// Sorts a copy of `values` ascending using IEEE total order.
pub fn sorted(values: &[f64]) -> Vec<f64> {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

/// Empirical `beta`-quantile in the inverse-CDF sense: the `ceil(beta * n)`-th
/// smallest value (1-based, clamped to `[1, n]`).
///
/// This is a minimizer of the summed pinball loss over constants, which is why
/// both the intercept polish of the linear solver and the boosting
/// initialization use it.
///
/// Returns `None` for an empty slice.
pub fn empirical_quantile(values: &[f64], beta: f64) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let s = sorted(values);
    Some(s[inverse_cdf_rank(s.len(), beta) - 1])
}

/// Same as [`empirical_quantile`] for an already sorted slice.
pub fn empirical_quantile_sorted(sorted: &[f64], beta: f64) -> Option<f64> {
    if sorted.is_empty() {
        return None;
    }
    Some(sorted[inverse_cdf_rank(sorted.len(), beta) - 1])
}

fn inverse_cdf_rank(n: usize, beta: f64) -> usize {
    let x = beta * n as f64;
    // products like 0.9 * 10 land a hair above the integer in binary
    let k = (x - 1e-9 * x.abs().max(1.0)).ceil();
    (k.max(1.0) as usize).min(n)
}

/// Linearly interpolated quantile of sorted data (numpy's default rule).
/// Infinite endpoints are propagated without producing NaN.
pub fn interpolated_quantile_sorted(sorted: &[f64], q: f64) -> Option<f64> {
    if sorted.is_empty() {
        return None;
    }
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let (a, b) = (sorted[lo], sorted[hi]);
    let frac = pos - lo as f64;
    if a == b || frac == 0.0 {
        Some(a)
    } else if frac == 1.0 {
        Some(b)
    } else if a.is_infinite() || b.is_infinite() {
        Some(if b.is_infinite() { b } else { a })
    } else {
        Some(a + (b - a) * frac)
    }
}

/// Arithmetic mean. Finite inputs use a running update, which returns `c`
/// exactly for a constant series.
pub fn mean(values: &[f64]) -> Option<f64> {
    mean_iter(values.iter().copied())
}

pub fn mean_iter(values: impl IntoIterator<Item = f64>) -> Option<f64> {
    let (mut m, mut sum, mut n) = (0.0, 0.0, 0usize);
    let mut finite = true;
    for v in values {
        n += 1;
        sum += v;
        finite &= v.is_finite();
        m += (v - m) / n as f64;
    }
    match n {
        0 => None,
        _ if finite => Some(m),
        _ => Some(sum / n as f64),
    }
}

/// Population standard deviation.
pub fn std_dev(values: &[f64]) -> Option<f64> {
    let m = mean(values)?;
    let var = values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / values.len() as f64;
    Some(var.sqrt())
}

/// Inserts `value` into an ascending vector, keeping it sorted.
pub(crate) fn sorted_insert(sorted: &mut Vec<f64>, value: f64) {
    let idx = sorted.partition_point(|v| v.total_cmp(&value) == Ordering::Less);
    sorted.insert(idx, value);
}

/// Removes one occurrence of `value` from an ascending vector.
pub(crate) fn sorted_remove(sorted: &mut Vec<f64>, value: f64) -> bool {
    let idx = sorted.partition_point(|v| v.total_cmp(&value) == Ordering::Less);
    if idx < sorted.len() && sorted[idx].total_cmp(&value) == Ordering::Equal {
        sorted.remove(idx);
        true
    } else {
        false
    }
}
