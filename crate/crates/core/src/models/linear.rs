//! Linear and lasso quantile regression.
//!
//! The pinball kink is smoothed with a Huber-type approximation whose width
//! shrinks geometrically across stages; each stage runs accelerated proximal
//! gradient (FISTA with adaptive restart) with soft-thresholding for the L1
//! term. Columns are standardized internally and coefficients are reported on
//! the original scale.

use serde::{Deserialize, Serialize};

use super::{check_design, ModelError, QuantileLevel};
use crate::stats;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LinearQrOptions {
    /// Relative objective change that ends a smoothing stage.
    pub tolerance: f64,
    /// Iteration budget summed over all stages.
    pub max_iter: usize,
    /// Initial smoothing width, in units of the target standard deviation.
    pub smoothing_start: f64,
    pub smoothing_min: f64,
    pub smoothing_decay: f64,
}

impl Default for LinearQrOptions {
    fn default() -> Self {
        Self {
            tolerance: 1e-6,
            max_iter: 10_000,
            smoothing_start: 0.5,
            smoothing_min: 1e-4,
            smoothing_decay: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitDiagnostics {
    pub iterations: usize,
    /// Mean pinball loss plus the L1 penalty on standardized coefficients.
    pub objective: f64,
    /// False when the iteration budget ran out before the final stage settled.
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearQuantileModel {
    pub level: QuantileLevel,
    pub coefficients: Vec<f64>,
    pub intercept: f64,
    pub l1_penalty: f64,
    pub diagnostics: FitDiagnostics,
}

impl LinearQuantileModel {
    pub fn predict(&self, x: &[f64]) -> Result<f64, ModelError> {
        if x.len() != self.coefficients.len() {
            return Err(ModelError::DimensionMismatch {
                expected: self.coefficients.len(),
                got: x.len(),
            });
        }
        Ok(self.intercept + dot(&self.coefficients, x))
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn soft_threshold(v: f64, t: f64) -> f64 {
    if v > t {
        v - t
    } else if v < -t {
        v + t
    } else {
        0.0
    }
}

/// Standardized problem: targets `yt`, row-major design `z` (n x q).
struct Problem {
    n: usize,
    q: usize,
    z: Vec<f64>,
    yt: Vec<f64>,
    beta: f64,
    lambda: f64,
}

impl Problem {
    fn residuals(&self, theta: &[f64], out: &mut [f64]) {
        let (b, w) = (theta[0], &theta[1..]);
        for i in 0..self.n {
            let row = &self.z[i * self.q..(i + 1) * self.q];
            out[i] = self.yt[i] - b - dot(row, w);
        }
    }

    /// Smoothed objective plus penalty, using precomputed residuals.
    fn objective(&self, resid: &[f64], theta: &[f64], eps: f64) -> f64 {
        let tilt = self.beta - 0.5;
        let loss: f64 = resid
            .iter()
            .map(|&r| {
                let a = r.abs();
                let huber = if a <= eps { r * r / (2.0 * eps) } else { a - eps / 2.0 };
                0.5 * huber + tilt * r
            })
            .sum::<f64>()
            / self.n as f64;
        loss + self.lambda * theta[1..].iter().map(|w| w.abs()).sum::<f64>()
    }

    fn gradient(&self, resid: &[f64], eps: f64, grad: &mut [f64]) {
        grad.iter_mut().for_each(|g| *g = 0.0);
        let tilt = self.beta - 0.5;
        for i in 0..self.n {
            let psi = 0.5 * (resid[i] / eps).clamp(-1.0, 1.0) + tilt;
            grad[0] -= psi;
            let row = &self.z[i * self.q..(i + 1) * self.q];
            for (g, zij) in grad[1..].iter_mut().zip(row) {
                *g -= psi * zij;
            }
        }
        let inv_n = 1.0 / self.n as f64;
        grad.iter_mut().for_each(|g| *g *= inv_n);
    }

    /// Largest eigenvalue of A'A/n with A = [1, Z], by power iteration.
    fn gram_norm(&self) -> f64 {
        let d = self.q + 1;
        let mut gram = vec![0.0; d * d];
        let mut a = vec![1.0; d];
        for i in 0..self.n {
            a[1..].copy_from_slice(&self.z[i * self.q..(i + 1) * self.q]);
            for r in 0..d {
                for c in r..d {
                    gram[r * d + c] += a[r] * a[c];
                }
            }
        }
        for r in 0..d {
            for c in r..d {
                gram[r * d + c] /= self.n as f64;
                gram[c * d + r] = gram[r * d + c];
            }
        }
        let mut v = vec![1.0 / (d as f64).sqrt(); d];
        let mut lambda = 0.0;
        for _ in 0..200 {
            let mut next = vec![0.0; d];
            for r in 0..d {
                next[r] = dot(&gram[r * d..(r + 1) * d], &v);
            }
            let norm = next.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm == 0.0 {
                break;
            }
            next.iter_mut().for_each(|x| *x /= norm);
            let converged = (norm - lambda).abs() <= 1e-10 * norm;
            lambda = norm;
            v = next;
            if converged {
                break;
            }
        }
        // slack against an under-estimate from early stopping
        lambda.max(1.0) * 1.02
    }
}

/// Runs FISTA at smoothing width `eps`; returns (iterations used, settled).
fn fista_stage(
    pb: &Problem,
    theta: &mut Vec<f64>,
    eps: f64,
    gram_norm: f64,
    tol: f64,
    budget: usize,
) -> (usize, bool) {
    let d = theta.len();
    let step = 2.0 * eps / gram_norm;
    let mut resid = vec![0.0; pb.n];
    let mut grad = vec![0.0; d];
    let mut ext = theta.clone();
    let mut t = 1.0f64;
    pb.residuals(theta, &mut resid);
    let mut f_prev = pb.objective(&resid, theta, eps);
    let mut it = 0;
    while it < budget {
        it += 1;
        pb.residuals(&ext, &mut resid);
        pb.gradient(&resid, eps, &mut grad);
        let mut next = vec![0.0; d];
        next[0] = ext[0] - step * grad[0];
        for j in 1..d {
            next[j] = soft_threshold(ext[j] - step * grad[j], step * pb.lambda);
        }
        pb.residuals(&next, &mut resid);
        let f_next = pb.objective(&resid, &next, eps);
        if f_next > f_prev {
            // adaptive restart: drop momentum and retry from the last iterate
            if t == 1.0 {
                return (it, true);
            }
            t = 1.0;
            ext.clone_from(theta);
            continue;
        }
        let rel = (f_prev - f_next) / f_prev.abs().max(1e-12);
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        let momentum = (t - 1.0) / t_next;
        for j in 0..d {
            ext[j] = next[j] + momentum * (next[j] - theta[j]);
        }
        *theta = next;
        t = t_next;
        f_prev = f_next;
        if rel < tol && it >= 3 {
            return (it, true);
        }
    }
    (it, false)
}

/// Fits a linear quantile model minimizing mean pinball loss plus
/// `lambda` times the L1 norm of the standardized coefficients.
///
/// `warm` seeds the solver from a previous fit on similar data (rolling
/// windows) and starts the smoothing schedule near its end.
pub fn fit_linear_qr(
    x: &[Vec<f64>],
    y: &[f64],
    level: QuantileLevel,
    lambda: f64,
    opts: &LinearQrOptions,
    warm: Option<&LinearQuantileModel>,
) -> Result<LinearQuantileModel, ModelError> {
    let p = check_design(x, y)?;
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(ModelError::InvalidHyper(format!("lambda must be >= 0, got {lambda}")));
    }
    if !(opts.smoothing_min > 0.0 && opts.smoothing_start >= opts.smoothing_min)
        || !(opts.smoothing_decay > 0.0 && opts.smoothing_decay < 1.0)
        || !(opts.tolerance > 0.0)
    {
        return Err(ModelError::InvalidHyper("invalid solver options".into()));
    }
    let n = y.len();
    let beta = level.value();
    let y_sd = stats::std_dev(y).unwrap_or(0.0);
    if y_sd == 0.0 {
        return Ok(LinearQuantileModel {
            level,
            coefficients: vec![0.0; p],
            intercept: y[0],
            l1_penalty: lambda,
            diagnostics: FitDiagnostics {
                iterations: 0,
                objective: 0.0,
                converged: true,
            },
        });
    }
    let center = stats::empirical_quantile(y, 0.5).expect("non-empty");
    let scale = y_sd;

    let mut means = vec![0.0; p];
    let mut sds = vec![0.0; p];
    for j in 0..p {
        let col: Vec<f64> = x.iter().map(|r| r[j]).collect();
        means[j] = stats::mean(&col).expect("non-empty");
        sds[j] = stats::std_dev(&col).expect("non-empty");
    }
    let active: Vec<usize> = (0..p)
        .filter(|&j| sds[j] > 1e-12 * (1.0 + means[j].abs()))
        .collect();
    let q = active.len();
    let mut z = Vec::with_capacity(n * q);
    for row in x {
        z.extend(active.iter().map(|&j| (row[j] - means[j]) / sds[j]));
    }
    let yt: Vec<f64> = y.iter().map(|v| (v - center) / scale).collect();
    let pb = Problem {
        n,
        q,
        z,
        yt,
        beta,
        lambda,
    };

    let mut theta = vec![0.0; q + 1];
    let warm = warm.filter(|w| w.coefficients.len() == p);
    match warm {
        Some(w) => {
            for (k, &j) in active.iter().enumerate() {
                theta[k + 1] = w.coefficients[j] * sds[j] / scale;
            }
            theta[0] = (w.intercept + dot(&w.coefficients, &means) - center) / scale;
        }
        None => {
            theta[0] = stats::empirical_quantile(&pb.yt, beta).expect("non-empty");
        }
    }

    let gram_norm = pb.gram_norm();
    let mut eps = match warm {
        Some(_) => (opts.smoothing_min * 4.0).min(opts.smoothing_start),
        None => opts.smoothing_start,
    };
    let mut used = 0usize;
    let mut settled;
    loop {
        let (it, ok) = fista_stage(&pb, &mut theta, eps, gram_norm, opts.tolerance, opts.max_iter - used);
        used += it;
        settled = ok;
        if eps <= opts.smoothing_min || used >= opts.max_iter {
            break;
        }
        eps = (eps * opts.smoothing_decay).max(opts.smoothing_min);
    }

    let mut coefficients = vec![0.0; p];
    for (k, &j) in active.iter().enumerate() {
        coefficients[j] = scale * theta[k + 1] / sds[j];
    }
    // exact intercept for the fitted slopes: a beta-quantile of the residuals
    let partial: Vec<f64> = x
        .iter()
        .zip(y)
        .map(|(row, yi)| yi - dot(&coefficients, row))
        .collect();
    let intercept = stats::empirical_quantile(&partial, beta).expect("non-empty");
    let loss = partial
        .iter()
        .map(|r| super::pinball_loss(*r, intercept, level))
        .sum::<f64>()
        / n as f64;
    let penalty = lambda
        * coefficients
            .iter()
            .zip(&sds)
            .map(|(c, s)| (c * s).abs())
            .sum::<f64>();

    Ok(LinearQuantileModel {
        level,
        coefficients,
        intercept,
        l1_penalty: lambda,
        diagnostics: FitDiagnostics {
            iterations: used,
            objective: loss + penalty,
            converged: settled && used < opts.max_iter,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn lv(b: f64) -> QuantileLevel {
        QuantileLevel::new(b).unwrap()
    }

    fn uniform_noise_line(n: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x: Vec<Vec<f64>> = (0..n).map(|_| vec![rng.random_range(-5.0..5.0)]).collect();
        let y = x
            .iter()
            .map(|r| 2.0 * r[0] + rng.random_range(-1.0..1.0))
            .collect();
        (x, y)
    }

    #[test]
    fn recovers_median_line() {
        let (x, y) = uniform_noise_line(5000, 1);
        let m = fit_linear_qr(&x, &y, lv(0.5), 0.0, &LinearQrOptions::default(), None).unwrap();
        assert!((m.coefficients[0] - 2.0).abs() < 0.05, "{m:?}");
        assert!(m.intercept.abs() < 0.05, "{m:?}");
        assert!(m.diagnostics.converged);
    }

    #[test]
    fn recovers_upper_quantile_intercept() {
        let (x, y) = uniform_noise_line(5000, 2);
        let m = fit_linear_qr(&x, &y, lv(0.9), 0.0, &LinearQrOptions::default(), None).unwrap();
        assert!((m.coefficients[0] - 2.0).abs() < 0.05, "{m:?}");
        assert!((m.intercept - 0.8).abs() < 0.05, "{m:?}");
    }

    #[test]
    fn heavy_penalty_shrinks_to_the_empirical_quantile() {
        let (x, y) = uniform_noise_line(1000, 3);
        let scale = stats::std_dev(&y).unwrap();
        for beta in [0.1, 0.5, 0.9] {
            let m = fit_linear_qr(&x, &y, lv(beta), 1e6 * scale, &LinearQrOptions::default(), None)
                .unwrap();
            assert_eq!(m.coefficients, vec![0.0]);
            assert_eq!(m.intercept, stats::empirical_quantile(&y, beta).unwrap());
        }
    }

    #[test]
    fn lasso_zeroes_irrelevant_columns() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x: Vec<Vec<f64>> = (0..800)
            .map(|_| (0..6).map(|_| rng.sample::<f64, _>(StandardNormal)).collect())
            .collect();
        let y: Vec<f64> = x
            .iter()
            .map(|r| 3.0 * r[0] - 2.0 * r[1] + 0.5 * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let m = fit_linear_qr(&x, &y, lv(0.5), 0.05, &LinearQrOptions::default(), None).unwrap();
        assert!(m.coefficients[0] > 2.5 && m.coefficients[1] < -1.5, "{m:?}");
        for c in &m.coefficients[2..] {
            assert!(c.abs() < 0.05, "{m:?}");
        }
        let zeros = m.coefficients[2..].iter().filter(|c| **c == 0.0).count();
        assert!(zeros >= 3, "{m:?}");
    }

    #[test]
    fn residual_sign_balance_matches_level() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 3000;
        let x: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..3).map(|_| rng.sample::<f64, _>(StandardNormal)).collect())
            .collect();
        let y: Vec<f64> = x
            .iter()
            .map(|r| 1.0 + r[0] - 0.5 * r[2] + rng.sample::<f64, _>(StandardNormal))
            .collect();
        for beta in [0.1, 0.5, 0.8] {
            let m = fit_linear_qr(&x, &y, lv(beta), 0.0, &LinearQrOptions::default(), None).unwrap();
            let below = x
                .iter()
                .zip(&y)
                .filter(|(r, yi)| **yi < m.predict(r).unwrap())
                .count() as f64
                / n as f64;
            assert!((below - beta).abs() < 4.0 * 4.0 / n as f64 + 0.01, "beta {beta}: {below}");
        }
    }

    #[test]
    fn constant_columns_are_ignored() {
        let (mut x, y) = uniform_noise_line(500, 6);
        x.iter_mut().for_each(|r| r.push(7.0));
        let m = fit_linear_qr(&x, &y, lv(0.5), 0.0, &LinearQrOptions::default(), None).unwrap();
        assert_eq!(m.coefficients[1], 0.0);
        assert!((m.coefficients[0] - 2.0).abs() < 0.1);
    }

    #[test]
    fn warm_start_matches_cold_fit() {
        let (x, y) = uniform_noise_line(600, 7);
        let opts = LinearQrOptions::default();
        let cold = fit_linear_qr(&x[1..], &y[1..], lv(0.7), 0.0, &opts, None).unwrap();
        let prev = fit_linear_qr(&x[..599], &y[..599], lv(0.7), 0.0, &opts, None).unwrap();
        let warm = fit_linear_qr(&x[1..], &y[1..], lv(0.7), 0.0, &opts, Some(&prev)).unwrap();
        assert!((cold.coefficients[0] - warm.coefficients[0]).abs() < 5e-3);
        assert!((cold.diagnostics.objective - warm.diagnostics.objective).abs() < 1e-4);
        assert!(warm.diagnostics.iterations < cold.diagnostics.iterations);
    }

    #[test]
    fn deterministic_fits() {
        let (x, y) = uniform_noise_line(300, 8);
        let a = fit_linear_qr(&x, &y, lv(0.3), 0.01, &LinearQrOptions::default(), None).unwrap();
        let b = fit_linear_qr(&x, &y, lv(0.3), 0.01, &LinearQrOptions::default(), None).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rejects_bad_inputs() {
        let opts = LinearQrOptions::default();
        assert_eq!(fit_linear_qr(&[], &[], lv(0.5), 0.0, &opts, None), Err(ModelError::EmptyData));
        let x = vec![vec![1.0], vec![2.0]];
        assert!(fit_linear_qr(&x, &[1.0, 2.0], lv(0.5), -1.0, &opts, None).is_err());
        assert!(fit_linear_qr(&x, &[1.0, f64::NAN], lv(0.5), 0.0, &opts, None).is_err());
    }

    #[test]
    fn iteration_budget_exhaustion_is_flagged() {
        let (x, y) = uniform_noise_line(500, 9);
        let opts = LinearQrOptions {
            max_iter: 5,
            ..LinearQrOptions::default()
        };
        let m = fit_linear_qr(&x, &y, lv(0.5), 0.0, &opts, None).unwrap();
        assert!(!m.diagnostics.converged);
        assert_eq!(m.diagnostics.iterations, 5);
    }
}
