//! Tail-conditional functionals on top of the robust core: hybrid return
//! level, conditional shortfall, causal-tail effect and mean recovery.

use serde::{Deserialize, Serialize};

use crate::dml::AdrfCurve;
use crate::error::{invalid, Result};
use crate::kernels::{self, WeightedSample};
use crate::pdhte::PerTTailCurve;
use crate::tail::gpd::{pwm_fit, XI_ZERO_TOL};
use crate::tail::TailEstimate;

/// Sides with a smaller local exceedance probability get no tail-mean term.
pub const MEAN_RECOVERY_P_FLOOR: f64 = 0.01;
/// Effective local exceedance mass below which the global shape is used.
pub const MIN_LOCAL_EXCEEDANCES: f64 = 15.0;

/// `Y_i - theta(T_i)` with `theta` interpolated on the curve.
pub fn residuals_from_curve(y: &[f64], t: &[f64], curve: &AdrfCurve) -> Vec<f64> {
    y.iter().zip(t).map(|(y, t)| y - curve.interpolate(*t)).collect()
}

fn combined_weights(t: &[f64], t0: f64, h: f64, extra: Option<&[f64]>) -> Result<Vec<f64>> {
    let mut w = kernels::gaussian_weights(t, t0, h)?;
    if let Some(e) = extra {
        if e.len() != w.len() {
            return Err(invalid("extra weights have the wrong length"));
        }
        for (wi, ei) in w.iter_mut().zip(e) {
            *wi *= ei;
        }
    }
    Ok(w)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SideFit {
    /// Global PWM shape of this side's exceedances; absent below five exceedances.
    pub xi: Option<f64>,
    pub sigma: Option<f64>,
    /// Kernel-weighted exceedance probability per grid point.
    pub p: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignConditionalFits {
    pub u_star: f64,
    pub plus: SideFit,
    pub minus: SideFit,
}

/// PWM on `{r > u*}` and `{r < -u*}` separately, with local exceedance probabilities.
pub fn sign_conditional_fits(
    residuals: &[f64],
    t: &[f64],
    u_star: f64,
    grid: &[f64],
    h: f64,
    extra_weights: Option<&[f64]>,
) -> Result<SignConditionalFits> {
    if !(u_star > 0.0) {
        return Err(invalid("threshold must be positive"));
    }
    if residuals.len() != t.len() {
        return Err(invalid("residual and treatment lengths differ"));
    }
    let side = |sign: f64| -> Result<SideFit> {
        let exc: Vec<f64> = residuals.iter().map(|r| sign * r - u_star).filter(|e| *e > 0.0).collect();
        let fit = pwm_fit(&exc).ok();
        let p = grid
            .iter()
            .map(|&t0| {
                let w = combined_weights(t, t0, h, extra_weights)?;
                let total: f64 = w.iter().sum();
                let hit: f64 = w.iter().zip(residuals).filter(|(_, r)| sign * **r > u_star).map(|(w, _)| w).sum();
                Ok(if total > 0.0 { hit / total } else { 0.0 })
            })
            .collect::<Result<Vec<f64>>>()?;
        Ok(SideFit { xi: fit.map(|f| f.xi), sigma: fit.map(|f| f.sigma), p })
    };
    Ok(SignConditionalFits { u_star, plus: side(1.0)?, minus: side(-1.0)? })
}

/// `theta_W + p_+ (u* + sigma_+/(1 - xi_+)) - p_- (u* + sigma_-/(1 - xi_-))`.
///
/// A side with `p < 0.01` contributes `+-p * theta_W` instead of its tail mean.
/// `None` where an active side has no fit or `xi >= 1`.
pub fn recover_mean_adrf(theta_w: &[f64], fits: &SignConditionalFits) -> Result<Vec<Option<f64>>> {
    if fits.plus.p.len() != theta_w.len() || fits.minus.p.len() != theta_w.len() {
        return Err(invalid("fits and curve have different grids"));
    }
    let u = fits.u_star;
    let term = |side: &SideFit, k: usize, th: f64| -> Option<f64> {
        let p = side.p[k];
        if p < MEAN_RECOVERY_P_FLOOR {
            return Some(p * th);
        }
        match (side.xi, side.sigma) {
            (Some(xi), Some(sigma)) if xi < 1.0 => Some(p * (u + sigma / (1.0 - xi))),
            _ => None,
        }
    };
    Ok(theta_w
        .iter()
        .enumerate()
        .map(|(k, &th)| Some(th + term(&fits.plus, k, th)? - term(&fits.minus, k, th)?))
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QMode {
    Empirical,
    Gpd,
}

impl QMode {
    pub fn as_str(self) -> &'static str {
        match self {
            QMode::Empirical => "empirical",
            QMode::Gpd => "gpd",
        }
    }
}

/// Empirical mode when `alpha * n_eff >= 1`.
pub fn choose_mode(alpha: f64, n_eff: f64) -> QMode {
    if alpha * n_eff >= 1.0 {
        QMode::Empirical
    } else {
        QMode::Gpd
    }
}

/// Tail shape and scale used at one grid point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalTail {
    pub xi: f64,
    pub sigma: f64,
    /// The global fit replaced a refused or thin per-T estimate.
    pub fallback: bool,
}

/// GPD excess quantile `(sigma/xi)[(n_exc/(alpha n))^xi - 1]`, log limit near 0.
fn gpd_excess(xi: f64, sigma: f64, n_exc: usize, n: usize, alpha: f64) -> f64 {
    let ratio = n_exc as f64 / (alpha * n as f64);
    if xi.abs() < XI_ZERO_TOL {
        sigma * ratio.ln()
    } else {
        sigma / xi * (ratio.powf(xi) - 1.0)
    }
}

/// `S = Q + (sigma + xi (Q - u*)) / (1 - xi)`, with `Q - u*` floored at 0;
/// `None` when `xi >= 1`.
pub fn conditional_shortfall(q: f64, xi: f64, sigma: f64, u_star: f64) -> Option<f64> {
    if !(xi < 1.0) || !(sigma > 0.0) {
        return None;
    }
    Some(q + (sigma + xi * (q - u_star).max(0.0)) / (1.0 - xi))
}

/// Central differences inside, one-sided at the ends; `None` propagates.
pub fn causal_tail_effect_partial(q: &[Option<f64>], grid: &[f64]) -> Result<Vec<Option<f64>>> {
    if grid.len() < 2 || q.len() != grid.len() {
        return Err(invalid("need at least two aligned grid points"));
    }
    if grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(invalid("grid must be strictly increasing"));
    }
    let n = grid.len();
    let diff = |a: usize, b: usize| Some((q[b]? - q[a]?) / (grid[b] - grid[a]));
    Ok((0..n)
        .map(|k| match k {
            0 => diff(0, 1),
            k if k == n - 1 => diff(n - 2, n - 1),
            k => diff(k - 1, k + 1),
        })
        .collect())
}

pub fn causal_tail_effect(q: &[f64], grid: &[f64]) -> Result<Vec<f64>> {
    let opt: Vec<Option<f64>> = q.iter().map(|v| Some(*v)).collect();
    Ok(causal_tail_effect_partial(&opt, grid)?.into_iter().map(|v| v.unwrap_or(f64::NAN)).collect())
}

/// Everything the functionals read besides the core curve.
#[derive(Debug, Clone, Copy)]
pub struct TailInputs<'a> {
    pub t: &'a [f64],
    /// `Y - theta_W(T)` per observation.
    pub residuals: &'a [f64],
    pub per_t: &'a PerTTailCurve,
    /// Global tail report; `None` when it refused.
    pub global: Option<&'a TailEstimate>,
    pub h: f64,
    pub extra_weights: Option<&'a [f64]>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HybridLevel {
    pub value: f64,
    pub mode: QMode,
    /// Residual-frame level, `value - theta_W(t0)`.
    pub residual_level: f64,
    pub tail: Option<LocalTail>,
}

/// Per-T shape and scale at grid index `k`, falling back to the global fit when
/// the point is refused or fewer than 15 effective exceedances sit above `u*`.
pub fn local_tail(inputs: &TailInputs<'_>, k: usize, weights: &[f64]) -> Option<LocalTail> {
    let global = inputs.global?;
    let u = global.u_star;
    let n_exc_eff: f64 = weights.iter().zip(inputs.residuals).filter(|(_, r)| r.abs() > u).map(|(w, _)| w).sum();
    let per_t = match (inputs.per_t.xi[k], inputs.per_t.sigma[k]) {
        (Some(xi), Some(sigma)) if !inputs.per_t.globally_refused => Some((xi, sigma)),
        _ => None,
    };
    match per_t {
        Some((xi, sigma)) if n_exc_eff >= MIN_LOCAL_EXCEEDANCES => Some(LocalTail { xi, sigma, fallback: false }),
        _ => Some(LocalTail { xi: global.xi_pwm, sigma: global.sigma_pwm, fallback: true }),
    }
}

/// Hybrid empirical-plus-GPD `(1 - alpha)` return level at grid index `k`.
pub fn hybrid_return_level(theta_w: &AdrfCurve, inputs: &TailInputs<'_>, alpha: f64, k: usize) -> Result<Option<HybridLevel>> {
    if !(alpha > 0.0 && alpha < 0.5) {
        return Err(invalid(format!("alpha must lie in (0, 0.5), got {alpha}")));
    }
    let t0 = theta_w.grid[k];
    let base = theta_w.theta[k];
    let w = combined_weights(inputs.t, t0, inputs.h, inputs.extra_weights)?;
    let n_eff = kernels::effective_n(&w);
    let tail = local_tail(inputs, k, &w);
    match choose_mode(alpha, n_eff) {
        QMode::Empirical => {
            let ws = WeightedSample::new(inputs.residuals.to_vec(), w)?;
            let rq = ws.quantile(1.0 - alpha)?;
            Ok(Some(HybridLevel { value: base + rq, mode: QMode::Empirical, residual_level: rq, tail }))
        }
        QMode::Gpd => {
            let (Some(global), Some(lt)) = (inputs.global, tail) else {
                return Ok(None);
            };
            let n = inputs.residuals.len();
            let rq = global.u_star + gpd_excess(lt.xi, lt.sigma, global.n_exc, n, alpha);
            Ok(Some(HybridLevel { value: base + rq, mode: QMode::Gpd, residual_level: rq, tail }))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TailFunctionals {
    pub alpha: f64,
    pub grid: Vec<f64>,
    pub theta_w: Vec<f64>,
    pub ey_recovered: Vec<Option<f64>>,
    pub q_alpha: Vec<Option<f64>>,
    pub q_mode: Vec<Option<QMode>>,
    pub s_alpha: Vec<Option<f64>>,
    pub cte: Vec<Option<f64>>,
    /// The global threshold fit refused.
    pub refused: bool,
}

/// Assembles every functional on the curve's grid. A refusal blanks the
/// return level, shortfall and causal-tail effect but keeps the core curve.
pub fn tail_functionals(theta_w: &AdrfCurve, inputs: &TailInputs<'_>, alpha: f64) -> Result<TailFunctionals> {
    let m = theta_w.grid.len();
    if inputs.per_t.grid.len() != m {
        return Err(invalid("per-T curve and core curve use different grids"));
    }
    if inputs.t.len() != inputs.residuals.len() {
        return Err(invalid("residual and treatment lengths differ"));
    }
    let refused = inputs.global.is_none();
    let ey_recovered = match inputs.global {
        Some(g) => {
            let fits = sign_conditional_fits(inputs.residuals, inputs.t, g.u_star, &theta_w.grid, inputs.h, inputs.extra_weights)?;
            recover_mean_adrf(&theta_w.theta, &fits)?
        }
        None => vec![None; m],
    };
    let mut out = TailFunctionals {
        alpha,
        grid: theta_w.grid.clone(),
        theta_w: theta_w.theta.clone(),
        ey_recovered,
        q_alpha: vec![None; m],
        q_mode: vec![None; m],
        s_alpha: vec![None; m],
        cte: vec![None; m],
        refused,
    };
    if refused {
        return Ok(out);
    }
    let u = inputs.global.map(|g| g.u_star).unwrap_or(f64::NAN);
    for k in 0..m {
        let Some(level) = hybrid_return_level(theta_w, inputs, alpha, k)? else {
            continue;
        };
        out.q_alpha[k] = Some(level.value);
        out.q_mode[k] = Some(level.mode);
        out.s_alpha[k] = level
            .tail
            .and_then(|lt| conditional_shortfall(level.residual_level, lt.xi, lt.sigma, u))
            .map(|s| s + theta_w.theta[k]);
    }
    if m >= 2 && !inputs.per_t.globally_refused {
        out.cte = causal_tail_effect_partial(&out.q_alpha, &out.grid)?;
    }
    Ok(out)
}
