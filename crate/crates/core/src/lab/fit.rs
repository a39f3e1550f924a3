//! Least-squares fit of the two-stage step response `r_inf·(1 − e^(−x)(1 + x))`, `x = (t − t0)/τ`.

use crate::dsp::step_response_model;

const MAX_ITERATIONS: usize = 200;
/// Fraction of the final value reached after one time constant: `1 − 2/e`.
const ONE_TAU_FRACTION: f64 = 0.264_241_117_657_115_4;

/// Fitted step parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepFit {
    pub r_inf: f64,
    pub tau_star: f64,
    /// Euclidean norm of the residuals at the solution.
    pub residual_norm: f64,
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum FitError {
    #[error("need at least 3 points after the step, got {0}")]
    TooFewPoints(usize),
    #[error("no rise after the step")]
    NoRise,
    #[error("no convergence after {0} iterations")]
    NotConverged(usize),
}

fn sum_sq(points: &[(f64, f64)], r_inf: f64, tau: f64) -> f64 {
    points.iter().map(|&(x, y)| (y - step_response_model(x, tau, r_inf)).powi(2)).sum()
}

/// Fits `(r_inf, τ*)` to `(t, r)` samples, using the points with `t > t0`.
///
/// Damped Gauss-Newton (Levenberg-Marquardt) started from the mean of the last tenth of
/// the data and from the time the data first crosses 26.4 % of it.
pub fn fit_step_response(series: &[(f64, f64)], t0: f64) -> Result<StepFit, FitError> {
    let points: Vec<(f64, f64)> = series.iter().filter(|p| p.0 > t0).map(|&(t, r)| (t - t0, r)).collect();
    if points.len() < 3 {
        return Err(FitError::TooFewPoints(points.len()));
    }
    let tail = &points[points.len() - (points.len() / 10).max(1)..];
    let mut r_inf = tail.iter().map(|p| p.1).sum::<f64>() / tail.len() as f64;
    if !(r_inf.abs() > 0.0) {
        return Err(FitError::NoRise);
    }
    let mut tau = initial_tau(&points, r_inf);

    let mut lambda = 1e-3;
    let mut cost = sum_sq(&points, r_inf, tau);
    for iteration in 1..=MAX_ITERATIONS {
        // normal equations for the 2×2 system
        let (mut a11, mut a12, mut a22, mut g1, mut g2) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for &(t, y) in &points {
            let x = t / tau;
            let shape = 1.0 - (-x).exp() * (1.0 + x);
            let d_tau = -r_inf * x * x * (-x).exp() / tau;
            let e = y - r_inf * shape;
            a11 += shape * shape;
            a12 += shape * d_tau;
            a22 += d_tau * d_tau;
            g1 += shape * e;
            g2 += d_tau * e;
        }
        loop {
            let (b11, b22) = (a11 * (1.0 + lambda), a22 * (1.0 + lambda));
            let det = b11 * b22 - a12 * a12;
            if det == 0.0 || !det.is_finite() {
                lambda *= 10.0;
                if lambda > 1e12 {
                    return Err(FitError::NotConverged(iteration));
                }
                continue;
            }
            let d_r = (g1 * b22 - a12 * g2) / det;
            let d_tau = (b11 * g2 - a12 * g1) / det;
            let (r_new, tau_new) = (r_inf + d_r, tau + d_tau);
            let cost_new = if tau_new > 0.0 { sum_sq(&points, r_new, tau_new) } else { f64::INFINITY };
            if cost_new <= cost {
                let converged = d_tau.abs() <= 1e-13 * tau && d_r.abs() <= 1e-13 * r_inf.abs().max(1e-300);
                (r_inf, tau, cost) = (r_new, tau_new, cost_new);
                lambda = (lambda / 10.0).max(1e-15);
                if converged || cost == 0.0 {
                    return Ok(StepFit { r_inf, tau_star: tau, residual_norm: cost.sqrt(), iterations: iteration });
                }
                break;
            }
            lambda *= 10.0;
            if lambda > 1e12 {
                // no downhill step left: at the minimum to working precision
                return Ok(StepFit { r_inf, tau_star: tau, residual_norm: cost.sqrt(), iterations: iteration });
            }
        }
    }
    Err(FitError::NotConverged(MAX_ITERATIONS))
}

fn initial_tau(points: &[(f64, f64)], r_inf: f64) -> f64 {
    let level = ONE_TAU_FRACTION * r_inf;
    let mut prev = (0.0, 0.0);
    for &(t, r) in points {
        if r >= level {
            let frac = if r > prev.1 { (level - prev.1) / (r - prev.1) } else { 1.0 };
            let crossing = prev.0 + frac * (t - prev.0);
            return crossing.max(points[0].0 * 0.5);
        }
        prev = (t, r);
    }
    points.last().map_or(1.0, |p| p.0 / 10.0)
}
