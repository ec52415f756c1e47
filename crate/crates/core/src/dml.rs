//! Cross-fit nuisance estimation and kernel-weighted local-linear
//! M-estimation of the dose-response curve under L2, Huber and Welsch losses.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dgp::Sample;
use crate::error::{invalid, Error, Result};
use crate::kernels::{self, WeightedSample};
use crate::rng::{rng_for, stream};

/// Normal-consistency factor for the MAD.
pub const MAD_SCALE: f64 = 1.4826;
pub const DEFAULT_HUBER_EPSILON: f64 = 1.35;
pub const DEFAULT_WELSCH_GAMMA: f64 = 0.10;
pub const DEFAULT_FOLDS: usize = 3;

const IRLS_MAX_ITER: usize = 50;
const IRLS_REL_TOL: f64 = 1e-8;
/// Kernel weight below which an observation does not count toward the band size.
const BAND_WEIGHT_FLOOR: f64 = 1e-6;
const MIN_BAND_OBS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    StandardL2,
    Huber,
    Welsch,
}

impl LossKind {
    pub fn as_str(self) -> &'static str {
        match self {
            LossKind::StandardL2 => "standard_l2",
            LossKind::Huber => "huber",
            LossKind::Welsch => "welsch",
        }
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "l2" | "standard" | "standard_l2" => Ok(LossKind::StandardL2),
            "huber" => Ok(LossKind::Huber),
            "welsch" => Ok(LossKind::Welsch),
            other => Err(Error::UnknownName(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossSpec {
    pub kind: LossKind,
    pub huber_epsilon: f64,
    pub welsch_gamma: f64,
}

impl LossSpec {
    pub fn new(kind: LossKind) -> Self {
        Self { kind, huber_epsilon: DEFAULT_HUBER_EPSILON, welsch_gamma: DEFAULT_WELSCH_GAMMA }
    }

    pub fn l2() -> Self {
        Self::new(LossKind::StandardL2)
    }

    pub fn huber() -> Self {
        Self::new(LossKind::Huber)
    }

    pub fn welsch() -> Self {
        Self::new(LossKind::Welsch)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.huber_epsilon > 0.0) {
            return Err(invalid("huber epsilon must be positive"));
        }
        if !(self.welsch_gamma > 0.0) {
            return Err(invalid("welsch gamma must be positive"));
        }
        Ok(())
    }

    /// Loss on a standardized residual `z = r / sigma`.
    pub fn rho(&self, z: f64) -> f64 {
        match self.kind {
            LossKind::StandardL2 => 0.5 * z * z,
            LossKind::Huber => {
                let e = self.huber_epsilon;
                if z.abs() <= e {
                    0.5 * z * z
                } else {
                    e * z.abs() - 0.5 * e * e
                }
            }
            LossKind::Welsch => {
                let g = self.welsch_gamma;
                (1.0 - (-g * z * z).exp()) / (2.0 * g)
            }
        }
    }

    /// IRLS weight `psi(z) / z`.
    pub fn weight(&self, z: f64) -> f64 {
        match self.kind {
            LossKind::StandardL2 => 1.0,
            LossKind::Huber => {
                let a = z.abs();
                if a <= self.huber_epsilon {
                    1.0
                } else {
                    self.huber_epsilon / a
                }
            }
            LossKind::Welsch => (-self.welsch_gamma * z * z).exp(),
        }
    }
}

/// Out-of-fold nuisance predictions.
#[derive(Debug, Clone, PartialEq)]
pub struct NuisanceFit {
    /// Out-of-fold `E[Y | X]`.
    pub g_hat: Vec<f64>,
    /// Out-of-fold `E[T | X]`.
    pub m_hat: Vec<f64>,
    pub fold_id: Vec<usize>,
}

impl NuisanceFit {
    pub fn outcome_residuals(&self, sample: &Sample) -> Vec<f64> {
        sample.y.iter().zip(&self.g_hat).map(|(y, g)| y - g).collect()
    }

    pub fn treatment_residuals(&self, sample: &Sample) -> Vec<f64> {
        sample.t.iter().zip(&self.m_hat).map(|(t, m)| t - m).collect()
    }
}

/// Candidate Nadaraya-Watson bandwidths in standardized covariate units.
pub const NW_BANDWIDTHS: [f64; 8] = [0.2, 0.3, 0.45, 0.65, 0.9, 1.3, 1.9, 2.8];
/// Training points used as leave-one-out targets when choosing the bandwidth.
const NW_CV_TARGETS: usize = 600;

/// Cross-fit Nadaraya-Watson regressions of `Y` and `T` on standardized `X`.
///
/// Product Gaussian kernel with one bandwidth for all standardized
/// coordinates, chosen separately for `Y` and `T` inside each training fold by
/// leave-one-out mean absolute error over [`NW_BANDWIDTHS`].
pub fn crossfit_nuisances(sample: &Sample, k_folds: usize, seed: u64) -> Result<NuisanceFit> {
    let n = sample.len();
    if k_folds < 2 {
        return Err(invalid(format!("need at least 2 folds, got {k_folds}")));
    }
    if n < 10 * k_folds {
        return Err(Error::Insufficient { needed: 10 * k_folds, got: n });
    }
    let d = sample.n_covariates();

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng_for(seed, stream::FOLDS));
    let mut fold_id = vec![0usize; n];
    for (rank, &i) in order.iter().enumerate() {
        fold_id[i] = rank % k_folds;
    }

    // standardize columns; constant columns carry no information and are dropped
    let mut live = Vec::with_capacity(d);
    let mut cols = Vec::with_capacity(d);
    for j in 0..d {
        let col = sample.x_col(j);
        let m = kernels::mean(&col);
        let s = kernels::std_dev(&col);
        if s > 0.0 && s.is_finite() {
            live.push(j);
            cols.push(col.iter().map(|v| (v - m) / s).collect::<Vec<f64>>());
        }
    }
    let dl = live.len();
    let mut z = vec![0.0; n * dl];
    for (c, col) in cols.iter().enumerate() {
        for i in 0..n {
            z[i * dl + c] = col[i];
        }
    }
    let dist2 = |a: usize, b: usize| -> f64 {
        let (za, zb) = (&z[a * dl..(a + 1) * dl], &z[b * dl..(b + 1) * dl]);
        za.iter().zip(zb).map(|(x, y)| (x - y) * (x - y)).sum()
    };

    let mut g_hat = vec![0.0; n];
    let mut m_hat = vec![0.0; n];
    for fold in 0..k_folds {
        let train: Vec<usize> = (0..n).filter(|&i| fold_id[i] != fold).collect();
        let test: Vec<usize> = (0..n).filter(|&i| fold_id[i] == fold).collect();
        let n_train = train.len() as f64;
        let y_mean = train.iter().map(|&i| sample.y[i]).sum::<f64>() / n_train;
        let t_mean = train.iter().map(|&i| sample.t[i]).sum::<f64>() / n_train;
        if dl == 0 {
            for &i in &test {
                g_hat[i] = y_mean;
                m_hat[i] = t_mean;
            }
            continue;
        }

        // leave-one-out absolute errors for every candidate bandwidth
        let stride = (train.len() / NW_CV_TARGETS).max(1);
        let targets: Vec<usize> = train.iter().copied().step_by(stride).collect();
        let nb = NW_BANDWIDTHS.len();
        let inv: Vec<f64> = NW_BANDWIDTHS.iter().map(|h| -0.5 / (h * h)).collect();
        let errs: Vec<(Vec<f64>, Vec<f64>)> = targets
            .par_iter()
            .map(|&i| {
                let mut acc = vec![(0.0, 0.0, 0.0); nb];
                for &k in &train {
                    if k == i {
                        continue;
                    }
                    let d2 = dist2(i, k);
                    for (a, c) in acc.iter_mut().zip(&inv) {
                        let w = (c * d2).exp();
                        a.0 += w;
                        a.1 += w * sample.y[k];
                        a.2 += w * sample.t[k];
                    }
                }
                let ey = acc.iter().map(|a| if a.0 > 1e-300 { (a.1 / a.0 - sample.y[i]).abs() } else { f64::INFINITY }).collect();
                let et = acc.iter().map(|a| if a.0 > 1e-300 { (a.2 / a.0 - sample.t[i]).abs() } else { f64::INFINITY }).collect();
                (ey, et)
            })
            .collect();
        let pick = |which: fn(&(Vec<f64>, Vec<f64>)) -> &Vec<f64>| -> f64 {
            let mut best = (f64::INFINITY, NW_BANDWIDTHS[nb - 1]);
            for b in 0..nb {
                let e: f64 = errs.iter().map(|x| which(x)[b]).sum();
                if e < best.0 {
                    best = (e, NW_BANDWIDTHS[b]);
                }
            }
            best.1
        };
        let h_y = pick(|x| &x.0);
        let h_t = pick(|x| &x.1);
        log::debug!("fold {fold}: nuisance bandwidths y={h_y} t={h_t}");
        let (cy, ct) = (-0.5 / (h_y * h_y), -0.5 / (h_t * h_t));

        let preds: Vec<(f64, f64)> = test
            .par_iter()
            .map(|&i| {
                let (mut wy, mut sy, mut wt, mut st) = (0.0, 0.0, 0.0, 0.0);
                for &k in &train {
                    let d2 = dist2(i, k);
                    let a = (cy * d2).exp();
                    let b = if ct == cy { a } else { (ct * d2).exp() };
                    wy += a;
                    sy += a * sample.y[k];
                    wt += b;
                    st += b * sample.t[k];
                }
                let g = if wy > 1e-300 { sy / wy } else { y_mean };
                let m = if wt > 1e-300 { st / wt } else { t_mean };
                (g, m)
            })
            .collect();
        for (&i, (g, m)) in test.iter().zip(preds) {
            g_hat[i] = g;
            m_hat[i] = m;
        }
    }
    Ok(NuisanceFit { g_hat, m_hat, fold_id })
}

/// Intercept and slope of a weighted least-squares line in `t - t0`.
pub(crate) fn wls_line(y: &[f64], t: &[f64], w: &[f64], t0: f64) -> Result<(f64, f64)> {
    let (mut s0, mut s1, mut s2, mut sy, mut sty) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for ((&yi, &ti), &wi) in y.iter().zip(t).zip(w) {
        let d = ti - t0;
        s0 += wi;
        s1 += wi * d;
        s2 += wi * d * d;
        sy += wi * yi;
        sty += wi * d * yi;
    }
    let det = s0 * s2 - s1 * s1;
    if !(s0 > 0.0) || !(det > 1e-12 * s0 * s2.max(f64::MIN_POSITIVE)) || !det.is_finite() {
        return Err(Error::Singular(t0));
    }
    let b0 = (s2 * sy - s1 * sty) / det;
    let b1 = (s0 * sty - s1 * sy) / det;
    Ok((b0, b1))
}

/// Kernel-weighted median absolute deviation scaled to the normal sd.
pub(crate) fn weighted_mad_scale(res: &[f64], w: &[f64]) -> f64 {
    let ws = match WeightedSample::new(res.to_vec(), w.to_vec()) {
        Ok(ws) => ws,
        Err(_) => return f64::NAN,
    };
    let med = match ws.median() {
        Ok(m) => m,
        Err(_) => return f64::NAN,
    };
    let dev: Vec<f64> = res.iter().map(|r| (r - med).abs()).collect();
    match WeightedSample::new(dev, w.to_vec()).and_then(|d| d.median()) {
        Ok(m) => MAD_SCALE * m,
        Err(_) => f64::NAN,
    }
}

/// One IRLS step record: the robust objective before and after the weighted
/// solve, both at the scale held fixed during that step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IrlsStep {
    pub sigma: f64,
    pub objective_before: f64,
    pub objective_after: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LocalFit {
    pub intercept: f64,
    pub slope: f64,
    pub iterations: usize,
    pub converged: bool,
    pub trace: Vec<IrlsStep>,
}

/// Local-linear M-fit of `r` on `t` at `t0`; returns the intercept and diagnostics.
///
/// Starts from the kernel-weighted least-squares line. Each step re-estimates
/// `sigma = 1.4826 * MAD` of the current residuals, then solves the weighted
/// least-squares problem with weights `kernel * rho_weight(residual / sigma)`.
/// Stops when the relative parameter change drops below 1e-8 or after 50 steps;
/// a non-converged fit returns the last iterate with `converged = false`.
pub fn local_linear_m_fit(r: &[f64], t: &[f64], t0: f64, h: f64, loss: &LossSpec) -> Result<LocalFit> {
    if r.len() != t.len() {
        return Err(invalid("residual and treatment lengths differ"));
    }
    loss.validate()?;
    let k = kernels::gaussian_weights(t, t0, h)?;
    let band = k.iter().filter(|&&w| w >= BAND_WEIGHT_FLOOR).count();
    if band < MIN_BAND_OBS {
        return Err(Error::Insufficient { needed: MIN_BAND_OBS, got: band });
    }
    m_fit_weighted(r, t, &k, t0, loss)
}

pub(crate) fn m_fit_weighted(r: &[f64], t: &[f64], k: &[f64], t0: f64, loss: &LossSpec) -> Result<LocalFit> {
    let (mut b0, mut b1) = wls_line(r, t, k, t0)?;
    if loss.kind == LossKind::StandardL2 {
        return Ok(LocalFit { intercept: b0, slope: b1, iterations: 0, converged: true, trace: vec![] });
    }
    let n = r.len();
    let mut res = vec![0.0; n];
    let mut w = vec![0.0; n];
    let mut trace = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    let objective = |b0: f64, b1: f64, sigma: f64| -> f64 {
        r.iter()
            .zip(t)
            .zip(k)
            .map(|((&ri, &ti), &ki)| ki * loss.rho((ri - b0 - b1 * (ti - t0)) / sigma))
            .sum()
    };
    for _ in 0..IRLS_MAX_ITER {
        for i in 0..n {
            res[i] = r[i] - b0 - b1 * (t[i] - t0);
        }
        let sigma = weighted_mad_scale(&res, k);
        if !(sigma > 1e-300) || !sigma.is_finite() {
            // at least half the kernel mass sits exactly on the line
            converged = true;
            break;
        }
        for i in 0..n {
            w[i] = k[i] * loss.weight(res[i] / sigma);
        }
        let (n0, n1) = match wls_line(r, t, &w, t0) {
            Ok(b) => b,
            Err(_) => break,
        };
        iterations += 1;
        trace.push(IrlsStep {
            sigma,
            objective_before: objective(b0, b1, sigma),
            objective_after: objective(n0, n1, sigma),
        });
        let change = (n0 - b0).abs().max((n1 - b1).abs());
        let scale = b0.abs().max(b1.abs()).max(1e-12);
        b0 = n0;
        b1 = n1;
        if change <= IRLS_REL_TOL * scale {
            converged = true;
            break;
        }
    }
    Ok(LocalFit { intercept: b0, slope: b1, iterations, converged, trace })
}

/// Estimated dose-response curve on a treatment grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdrfCurve {
    pub grid: Vec<f64>,
    pub theta: Vec<f64>,
    pub loss: LossKind,
    pub bandwidth: f64,
    /// Grid points whose IRLS hit the iteration cap.
    pub non_converged: usize,
}

impl AdrfCurve {
    /// Piecewise-linear interpolation, flat outside the grid.
    pub fn interpolate(&self, t: f64) -> f64 {
        interpolate(&self.grid, &self.theta, t)
    }
}

pub(crate) fn interpolate(grid: &[f64], values: &[f64], t: f64) -> f64 {
    let n = grid.len();
    if n == 1 || t <= grid[0] {
        return values[0];
    }
    if t >= grid[n - 1] {
        return values[n - 1];
    }
    let k = grid.partition_point(|&g| g <= t).min(n - 1).max(1);
    let (g0, g1) = (grid[k - 1], grid[k]);
    let a = (t - g0) / (g1 - g0);
    values[k - 1] * (1.0 - a) + values[k] * a
}

/// ADRF from precomputed nuisances: local-linear M-fit of `Y - g_hat` on `T`
/// plus `mean(g_hat)`.
pub fn adrf_from_nuisance(
    sample: &Sample,
    nuisance: &NuisanceFit,
    grid: &[f64],
    loss: &LossSpec,
    h: f64,
) -> Result<AdrfCurve> {
    let ry = nuisance.outcome_residuals(sample);
    let level = kernels::mean(&nuisance.g_hat);
    let fits: Vec<LocalFit> = grid
        .par_iter()
        .map(|&t0| local_linear_m_fit(&ry, &sample.t, t0, h, loss))
        .collect::<Result<_>>()?;
    Ok(AdrfCurve {
        grid: grid.to_vec(),
        theta: fits.iter().map(|f| f.intercept + level).collect(),
        loss: loss.kind,
        bandwidth: h,
        non_converged: fits.iter().filter(|f| !f.converged).count(),
    })
}

/// Full pipeline: cross-fit nuisances, Silverman bandwidth on `T`, local M-fits.
pub fn estimate_adrf(
    sample: &Sample,
    grid: &[f64],
    loss: &LossSpec,
    k_folds: usize,
    seed: u64,
) -> Result<AdrfCurve> {
    let nuisance = crossfit_nuisances(sample, k_folds, seed)?;
    let h = kernels::silverman_bandwidth(&sample.t)?;
    adrf_from_nuisance(sample, &nuisance, grid, loss, h)
}
