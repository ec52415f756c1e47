//! Comparison estimators: local-linear quantile regression, a Pickands-type
//! shape proxy from three quantile fits, QR-averaged shortfall, and the
//! residual-PWM peaks-over-threshold return level.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dgp::Sample;
use crate::dml::{wls_line, AdrfCurve};
use crate::error::{invalid, Error, Result};
use crate::kernels;
use crate::tail::gpd::{return_level, GpdFit};
use crate::tail::TailEstimate;

const QR_MAX_ITER: usize = 100;
const QR_SMOOTHING: f64 = 1e-4;
pub const PICKANDS_BASE_ALPHA: f64 = 0.05;
pub const QR_AVG_LEVELS: usize = 6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QrCurve {
    pub grid: Vec<f64>,
    pub tau: f64,
    pub q_hat: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QrFit {
    pub intercept: f64,
    pub slope: f64,
    pub iterations: usize,
    /// Kernel-weighted pinball objective after each iterate, starting with the initial fit.
    pub objective: Vec<f64>,
}

pub fn pinball(r: f64, tau: f64) -> f64 {
    if r >= 0.0 {
        tau * r
    } else {
        (tau - 1.0) * r
    }
}

/// Local-linear pinball fit at `t0` by majorize-minimize reweighted least squares
/// on the check loss smoothed by `delta`.
pub fn local_linear_quantile(y: &[f64], t: &[f64], t0: f64, h: f64, tau: f64, delta: f64) -> Result<QrFit> {
    if !(tau > 0.0 && tau < 1.0) {
        return Err(invalid(format!("tau must lie in (0,1), got {tau}")));
    }
    if !(delta > 0.0) {
        return Err(invalid("smoothing must be positive"));
    }
    let k = kernels::gaussian_weights(t, t0, h)?;
    let (mut b0, mut b1) = wls_line(y, t, &k, t0)?;
    let n = y.len();
    let objective = |b0: f64, b1: f64| -> f64 {
        (0..n).map(|i| k[i] * pinball(y[i] - b0 - b1 * (t[i] - t0), tau)).sum()
    };
    let mut trace = vec![objective(b0, b1)];
    let scale = y.iter().map(|v| v.abs()).fold(0.0, f64::max).max(1e-300);
    if (0..n).all(|i| (y[i] - b0 - b1 * (t[i] - t0)).abs() <= 1e-12 * scale) {
        return Ok(QrFit { intercept: b0, slope: b1, iterations: 0, objective: trace });
    }
    let mut z = vec![0.0; n];
    let mut v = vec![0.0; n];
    let mut iterations = 0;
    for _ in 0..QR_MAX_ITER {
        for i in 0..n {
            let m = (y[i] - b0 - b1 * (t[i] - t0)).abs() + delta;
            v[i] = k[i] / m;
            z[i] = y[i] + (2.0 * tau - 1.0) * m;
        }
        let (n0, n1) = match wls_line(&z, t, &v, t0) {
            Ok(b) => b,
            Err(_) => break,
        };
        iterations += 1;
        let change = (n0 - b0).abs().max((n1 - b1).abs());
        let size = b0.abs().max(b1.abs()).max(delta);
        b0 = n0;
        b1 = n1;
        trace.push(objective(b0, b1));
        if change <= 1e-10 * size {
            break;
        }
    }
    Ok(QrFit { intercept: b0, slope: b1, iterations, objective: trace })
}

fn smoothing(y: &[f64]) -> f64 {
    let sd = kernels::std_dev(y);
    if sd > 0.0 && sd.is_finite() {
        QR_SMOOTHING * sd
    } else {
        QR_SMOOTHING
    }
}

/// Kernel-weighted local-linear quantile regression of `Y` on `T` over the grid.
pub fn qr_quantile_curve(sample: &Sample, grid: &[f64], tau: f64, h: f64) -> Result<QrCurve> {
    qr_curve_raw(&sample.y, &sample.t, grid, tau, h)
}

pub(crate) fn qr_curve_raw(y: &[f64], t: &[f64], grid: &[f64], tau: f64, h: f64) -> Result<QrCurve> {
    let delta = smoothing(y);
    let q_hat = grid
        .par_iter()
        .map(|&t0| local_linear_quantile(y, t, t0, h, tau, delta).map(|f| f.intercept))
        .collect::<Result<Vec<f64>>>()?;
    Ok(QrCurve { grid: grid.to_vec(), tau, q_hat })
}

/// `log[(q_{1-a} - q_{1-2a}) / (q_{1-2a} - q_{1-4a})] / log 2`.
pub fn pickands_from_quantiles(q1: f64, q2: f64, q4: f64) -> Option<f64> {
    let (top, bottom) = (q1 - q2, q2 - q4);
    if !(top > 0.0 && bottom > 0.0) {
        return None;
    }
    Some((top / bottom).ln() / std::f64::consts::LN_2)
}

/// Pickands-type shape proxy from QR fits at `1 - a`, `1 - 2a`, `1 - 4a`.
pub fn qr_xi_proxy(sample: &Sample, grid: &[f64], alpha_base: f64, h: f64) -> Result<Vec<Option<f64>>> {
    if !(alpha_base > 0.0 && alpha_base < 0.25) {
        return Err(invalid("base level must lie in (0, 0.25)"));
    }
    let q1 = qr_quantile_curve(sample, grid, 1.0 - alpha_base, h)?;
    let q2 = qr_quantile_curve(sample, grid, 1.0 - 2.0 * alpha_base, h)?;
    let q4 = qr_quantile_curve(sample, grid, 1.0 - 4.0 * alpha_base, h)?;
    Ok((0..grid.len()).map(|k| pickands_from_quantiles(q1.q_hat[k], q2.q_hat[k], q4.q_hat[k])).collect())
}

/// Levels `1 - alpha (m - 0.5) / M`, `m = 1..M`.
pub fn qr_avg_levels(alpha: f64, m: usize) -> Vec<f64> {
    (1..=m).map(|j| 1.0 - alpha * (j as f64 - 0.5) / m as f64).collect()
}

/// Average of `M` QR curves spread over the upper `alpha` tail.
pub fn qr_avg_shortfall(sample: &Sample, grid: &[f64], alpha: f64, m: usize, h: f64) -> Result<Vec<f64>> {
    if m == 0 {
        return Err(invalid("need at least one level"));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(invalid("alpha must lie in (0,1)"));
    }
    let mut acc = vec![0.0; grid.len()];
    for tau in qr_avg_levels(alpha, m) {
        let c = qr_quantile_curve(sample, grid, tau, h)?;
        for (a, q) in acc.iter_mut().zip(&c.q_hat) {
            *a += q / m as f64;
        }
    }
    Ok(acc)
}

/// PWM with plotting positions `(S - C_j) / (S - w_j)` on ascending values,
/// `C_j` the cumulative weight through `j` and `S` the total.
pub fn weighted_pwm_fit(values: &[f64], weights: &[f64]) -> Result<GpdFit> {
    if values.len() != weights.len() {
        return Err(invalid("values and weights differ in length"));
    }
    let mut pairs: Vec<(f64, f64)> = values.iter().copied().zip(weights.iter().copied()).filter(|p| p.1 > 0.0).collect();
    if pairs.len() < crate::tail::gpd::MIN_PWM_EXCEEDANCES {
        return Err(Error::Insufficient { needed: crate::tail::gpd::MIN_PWM_EXCEEDANCES, got: pairs.len() });
    }
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let s: f64 = pairs.iter().map(|p| p.1).sum();
    let mut cum = 0.0;
    let (mut a0, mut a1) = (0.0, 0.0);
    for &(v, w) in &pairs {
        cum += w;
        let denom = s - w;
        if !(denom > 0.0) {
            return Err(Error::InvalidFit("one observation carries all the weight".into()));
        }
        let pos = ((s - cum) / denom).max(0.0);
        a0 += w * v;
        a1 += w * pos * v;
    }
    a0 /= s;
    a1 /= s;
    let d = a0 - 2.0 * a1;
    if d == 0.0 || !(d.abs() > 1e-14 * a0.abs()) {
        return Err(Error::InvalidFit("a0 - 2 a1 vanishes".into()));
    }
    let xi = 2.0 - a0 / d;
    let sigma = 2.0 * a0 * a1 / d;
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::InvalidFit(format!("non-positive scale {sigma}")));
    }
    Ok(GpdFit { xi, sigma })
}

/// Local weighted PWM on `|r| - u*` and the residual-frame return level.
pub fn residual_pwm_point(
    residuals: &[f64],
    weights: &[f64],
    u_star: f64,
    n_exc: usize,
    alpha: f64,
) -> Result<(GpdFit, f64)> {
    let (exc, w): (Vec<f64>, Vec<f64>) = residuals
        .iter()
        .zip(weights)
        .filter(|(r, _)| r.abs() > u_star)
        .map(|(r, w)| (r.abs() - u_star, *w))
        .unzip();
    let fit = weighted_pwm_fit(&exc, &w)?;
    let level = return_level(u_star, fit.xi, fit.sigma, n_exc, residuals.len(), alpha)?.value;
    Ok((fit, level))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualPwmCurve {
    pub grid: Vec<f64>,
    pub q_hat: Vec<f64>,
    pub xi: Vec<f64>,
    /// The global PWM fit replaced an invalid local fit.
    pub fallback: Vec<bool>,
}

/// `theta_W(t) + u* + (sigma(t)/xi(t)) [(n_exc/(alpha n))^xi(t) - 1]` with
/// kernel-weighted PWM fits; invalid local fits use the global PWM fit.
pub fn residual_pwm_return_level(
    theta_w: &AdrfCurve,
    residuals: &[f64],
    t: &[f64],
    alpha: f64,
    h: f64,
    global: &TailEstimate,
) -> Result<ResidualPwmCurve> {
    if residuals.len() != t.len() {
        return Err(invalid("residual and treatment lengths differ"));
    }
    let points = theta_w
        .grid
        .par_iter()
        .zip(&theta_w.theta)
        .map(|(&t0, &th)| {
            let w = kernels::gaussian_weights(t, t0, h)?;
            match residual_pwm_point(residuals, &w, global.u_star, global.n_exc, alpha) {
                Ok((fit, level)) => Ok((th + level, fit.xi, false)),
                Err(_) => {
                    let level = return_level(global.u_star, global.xi_pwm, global.sigma_pwm, global.n_exc, residuals.len(), alpha)?.value;
                    Ok((th + level, global.xi_pwm, true))
                }
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ResidualPwmCurve {
        grid: theta_w.grid.clone(),
        q_hat: points.iter().map(|p| p.0).collect(),
        xi: points.iter().map(|p| p.1).collect(),
        fallback: points.iter().map(|p| p.2).collect(),
    })
}
