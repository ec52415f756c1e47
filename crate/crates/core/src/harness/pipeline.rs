//! One estimator run on one sample: core curve, tail curves and labels.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::baselines::{qr_avg_shortfall, qr_quantile_curve, qr_xi_proxy, residual_pwm_return_level, PICKANDS_BASE_ALPHA, QR_AVG_LEVELS};
use crate::dgp::{linspace, Sample};
use crate::dml::{adrf_from_nuisance, crossfit_nuisances, AdrfCurve, LossKind, LossSpec, NuisanceFit, DEFAULT_FOLDS};
use crate::error::{invalid, Error, Result};
use crate::functionals::{residuals_from_curve, tail_functionals, TailFunctionals, TailInputs};
use crate::kernels::{self, WeightedSample};
use crate::pdhte::{gps_weights, pdhte_curve_with_bandwidth, PdhteConfig, PerTTailCurve, StabilizedWeights, DEFAULT_CLIP_MULT, DEFAULT_WINSOR_PCT};
use crate::rng::mix_seed;
use crate::tail::{build_tail_report, Regime, TailReport, ThresholdConfig};

/// Points of the internal curve used to residualize every observation.
const RESIDUAL_GRID_POINTS: usize = 41;
/// Treatment quantiles spanned by that curve; it is flat beyond them.
const RESIDUAL_GRID_COVERAGE: (f64, f64) = (0.005, 0.995);
/// Half-width of the Gumbel band used when labelling a shape estimate.
pub const REGIME_TOLERANCE: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorKind {
    Standard,
    Huber,
    Welsch,
    Qr,
    Rpwm,
}

impl EstimatorKind {
    pub const ALL: [EstimatorKind; 5] =
        [EstimatorKind::Standard, EstimatorKind::Huber, EstimatorKind::Welsch, EstimatorKind::Qr, EstimatorKind::Rpwm];

    pub fn as_str(self) -> &'static str {
        match self {
            EstimatorKind::Standard => "standard",
            EstimatorKind::Huber => "huber",
            EstimatorKind::Welsch => "welsch",
            EstimatorKind::Qr => "qr",
            EstimatorKind::Rpwm => "rpwm",
        }
    }

    /// Loss of the robust core, for the estimators that have one.
    pub fn core_loss(self) -> Option<LossKind> {
        match self {
            EstimatorKind::Standard => Some(LossKind::StandardL2),
            EstimatorKind::Huber => Some(LossKind::Huber),
            EstimatorKind::Welsch | EstimatorKind::Rpwm => Some(LossKind::Welsch),
            EstimatorKind::Qr => None,
        }
    }
}

impl fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EstimatorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL.into_iter().find(|k| k.as_str() == s).ok_or_else(|| Error::UnknownName(s.to_string()))
    }
}

/// Regime label from a point shape estimate with a symmetric Gumbel band.
pub fn label_regime(xi: f64) -> Regime {
    if xi > REGIME_TOLERANCE {
        Regime::Frechet
    } else if xi < -REGIME_TOLERANCE {
        Regime::Weibull
    } else {
        Regime::Gumbel
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitConfig {
    pub k_folds: usize,
    pub threshold: ThresholdConfig,
    pub pdhte: PdhteConfig,
    /// Stabilized GPS weights enter the per-T tail and the functionals.
    pub gps: bool,
    pub seed: u64,
}

impl FitConfig {
    pub fn with_seed(seed: u64) -> Self {
        Self {
            k_folds: DEFAULT_FOLDS,
            threshold: ThresholdConfig::with_seed(mix_seed(seed, 0x7448)),
            pdhte: PdhteConfig::with_seed(mix_seed(seed, 0x7064)),
            gps: false,
            seed,
        }
    }
}

/// Evenly spaced grid over the observed treatment range, or over its
/// 5th-95th percentile interior when GPS weighting is active.
pub fn treatment_grid(t: &[f64], points: usize, gps: bool) -> Result<Vec<f64>> {
    if t.is_empty() {
        return Err(Error::Insufficient { needed: 1, got: 0 });
    }
    let (lo, hi) = if gps {
        let ws = WeightedSample::uniform(t.to_vec())?;
        (ws.quantile(0.05)?, ws.quantile(0.95)?)
    } else {
        (t.iter().copied().fold(f64::INFINITY, f64::min), t.iter().copied().fold(f64::NEG_INFINITY, f64::max))
    };
    Ok(linspace(lo, hi, points))
}

/// Core curve on the grid plus per-observation residuals.
#[derive(Debug, Clone, PartialEq)]
pub struct CoreFit {
    pub curve: AdrfCurve,
    pub residuals: Vec<f64>,
    pub h: f64,
}

pub fn fit_core(sample: &Sample, nuisance: &NuisanceFit, grid: &[f64], loss: LossKind) -> Result<CoreFit> {
    let h = kernels::silverman_bandwidth(&sample.t)?;
    let spec = LossSpec::new(loss);
    let curve = adrf_from_nuisance(sample, nuisance, grid, &spec, h)?;
    let ws = WeightedSample::uniform(sample.t.clone())?;
    let fine = linspace(ws.quantile(RESIDUAL_GRID_COVERAGE.0)?, ws.quantile(RESIDUAL_GRID_COVERAGE.1)?, RESIDUAL_GRID_POINTS);
    let dense = adrf_from_nuisance(sample, nuisance, &fine, &spec, h)?;
    let residuals = residuals_from_curve(&sample.y, &sample.t, &dense);
    Ok(CoreFit { curve, residuals, h })
}

/// Everything the proposed pipeline produces for one core.
#[derive(Debug, Clone, PartialEq)]
pub struct TailPipeline {
    pub core: CoreFit,
    pub report: TailReport,
    pub per_t: PerTTailCurve,
    pub functionals: Vec<TailFunctionals>,
    pub weights: Option<StabilizedWeights>,
}

/// Core fit, global tail report, per-T tail curve and functionals at each alpha.
pub fn run_tail_pipeline(
    sample: &Sample,
    nuisance: &NuisanceFit,
    grid: &[f64],
    loss: LossKind,
    alphas: &[f64],
    cfg: &FitConfig,
) -> Result<TailPipeline> {
    let core = fit_core(sample, nuisance, grid, loss)?;
    let report = build_tail_report(&core.residuals, &cfg.threshold)?;
    let weights = if cfg.gps { Some(gps_weights(sample, nuisance, DEFAULT_WINSOR_PCT, DEFAULT_CLIP_MULT)?) } else { None };
    let extra = weights.as_ref().map(|w| w.sw.as_slice());
    let per_t = pdhte_curve_with_bandwidth(&sample.y, &sample.t, grid, &cfg.pdhte, extra, core.h)?;
    let inputs = TailInputs {
        t: &sample.t,
        residuals: &core.residuals,
        per_t: &per_t,
        global: report.estimate.as_ref(),
        h: core.h,
        extra_weights: extra,
    };
    let functionals = alphas.iter().map(|&a| tail_functionals(&core.curve, &inputs, a)).collect::<Result<Vec<_>>>()?;
    Ok(TailPipeline { core, report, per_t, functionals, weights })
}

/// Curves an estimator contributes to the panel metrics.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorOutput {
    pub estimator: EstimatorKind,
    pub grid: Vec<f64>,
    pub core: Vec<f64>,
    /// Return-level curve per alpha; `None` entries are refused points.
    pub q: Vec<Vec<Option<f64>>>,
    /// Shortfall curve at the first alpha, when the estimator has one.
    pub s: Option<Vec<Option<f64>>>,
    /// Shape estimates behind the regime label.
    pub xi: Vec<Option<f64>>,
    pub refused: bool,
}

impl EstimatorOutput {
    /// Label from the mean of the defined shape estimates.
    pub fn regime(&self) -> Option<Regime> {
        let xs: Vec<f64> = self.xi.iter().flatten().copied().collect();
        (!xs.is_empty()).then(|| label_regime(kernels::mean(&xs)))
    }
}

pub fn run_estimator(
    sample: &Sample,
    kind: EstimatorKind,
    grid: &[f64],
    alphas: &[f64],
    cfg: &FitConfig,
) -> Result<EstimatorOutput> {
    if alphas.is_empty() {
        return Err(invalid("need at least one alpha"));
    }
    let m = grid.len();
    match kind {
        EstimatorKind::Qr => {
            let h = kernels::silverman_bandwidth(&sample.t)?;
            let core = qr_quantile_curve(sample, grid, 0.5, h)?.q_hat;
            let q = alphas
                .iter()
                .map(|&a| Ok(qr_quantile_curve(sample, grid, 1.0 - a, h)?.q_hat.into_iter().map(Some).collect()))
                .collect::<Result<Vec<Vec<Option<f64>>>>>()?;
            let s = qr_avg_shortfall(sample, grid, alphas[0], QR_AVG_LEVELS, h)?.into_iter().map(Some).collect();
            let xi = qr_xi_proxy(sample, grid, PICKANDS_BASE_ALPHA, h)?;
            Ok(EstimatorOutput { estimator: kind, grid: grid.to_vec(), core, q, s: Some(s), xi, refused: false })
        }
        EstimatorKind::Rpwm => {
            let nuisance = crossfit_nuisances(sample, cfg.k_folds, cfg.seed)?;
            let core = fit_core(sample, &nuisance, grid, LossKind::Welsch)?;
            let report = build_tail_report(&core.residuals, &cfg.threshold)?;
            let Some(global) = report.estimate.as_ref() else {
                return Ok(EstimatorOutput {
                    estimator: kind,
                    grid: grid.to_vec(),
                    core: core.curve.theta,
                    q: vec![vec![None; m]; alphas.len()],
                    s: None,
                    xi: vec![None; m],
                    refused: true,
                });
            };
            let mut q = Vec::with_capacity(alphas.len());
            let mut xi = vec![None; m];
            for &a in alphas {
                let c = residual_pwm_return_level(&core.curve, &core.residuals, &sample.t, a, core.h, global)?;
                xi = c.xi.iter().map(|v| Some(*v)).collect();
                q.push(c.q_hat.into_iter().map(Some).collect());
            }
            Ok(EstimatorOutput { estimator: kind, grid: grid.to_vec(), core: core.curve.theta, q, s: None, xi, refused: false })
        }
        _ => {
            let loss = kind.core_loss().expect("core estimators carry a loss");
            let nuisance = crossfit_nuisances(sample, cfg.k_folds, cfg.seed)?;
            let p = run_tail_pipeline(sample, &nuisance, grid, loss, alphas, cfg)?;
            let refused = p.functionals.iter().any(|f| f.refused);
            let xi = if p.per_t.globally_refused { vec![None; m] } else { p.per_t.xi.clone() };
            Ok(EstimatorOutput {
                estimator: kind,
                grid: grid.to_vec(),
                core: p.core.curve.theta.clone(),
                q: p.functionals.iter().map(|f| f.q_alpha.clone()).collect(),
                s: Some(p.functionals[0].s_alpha.clone()),
                xi,
                refused,
            })
        }
    }
}
