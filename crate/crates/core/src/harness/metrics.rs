//! Cell-level accuracy metrics and paired bootstrap comparisons.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dgp::OracleCurves;
use crate::error::{invalid, Error, Result};
use crate::kernels::WeightedSample;
use crate::rng::{rng_for, stream};
use crate::tail::Regime;

use super::pipeline::label_regime;

/// Bootstrap replicates below this count still run but log a warning.
pub const MIN_METRIC_BOOTSTRAP: usize = 50;

/// Mean absolute error over the points where the estimate is defined.
pub fn mae_defined(estimate: &[Option<f64>], truth: &[f64]) -> Option<f64> {
    let errs: Vec<f64> = estimate.iter().zip(truth).filter_map(|(e, t)| e.map(|e| (e - t).abs())).collect();
    (!errs.is_empty()).then(|| errs.iter().sum::<f64>() / errs.len() as f64)
}

pub fn mae(estimate: &[f64], truth: &[f64]) -> f64 {
    let n = estimate.len().min(truth.len());
    if n == 0 {
        return f64::NAN;
    }
    estimate.iter().zip(truth).map(|(e, t)| (e - t).abs()).sum::<f64>() / n as f64
}

/// Normalized regret of allocating treatment at the estimated minimizer:
/// `(Q(t_hat) - min Q) / (max Q - min Q)` on the oracle curve.
pub fn allocation_error(estimate: &[Option<f64>], oracle: &[f64]) -> Option<f64> {
    let k_hat = estimate
        .iter()
        .enumerate()
        .filter_map(|(k, e)| e.map(|v| (k, v)))
        .min_by(|a, b| a.1.total_cmp(&b.1))?
        .0;
    let lo = oracle.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = oracle.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi - lo <= 0.0 {
        return Some(0.0);
    }
    Some((oracle[k_hat] - lo) / (hi - lo))
}

/// Majority label of the pointwise true shapes; ties favour the heavier regime.
pub fn truth_regime(xi_true: &[f64]) -> Regime {
    let mut counts = [0usize; 3];
    for &x in xi_true {
        counts[match label_regime(x) {
            Regime::Frechet => 0,
            Regime::Gumbel => 1,
            Regime::Weibull => 2,
        }] += 1;
    }
    let best = (0..3).max_by(|&a, &b| counts[a].cmp(&counts[b]).then(b.cmp(&a))).unwrap_or(0);
    [Regime::Frechet, Regime::Gumbel, Regime::Weibull][best]
}

/// Metrics for one (DGP, contamination, seed, estimator) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellMetrics {
    pub core_mae: f64,
    /// Return-level MAE per alpha.
    pub q_mae: Vec<Option<f64>>,
    pub alloc: Vec<Option<f64>>,
    /// Shortfall MAE at the first alpha.
    pub s_mae: Option<f64>,
    pub regime: Option<Regime>,
    pub truth_regime: Regime,
}

pub fn cell_metrics(output: &super::pipeline::EstimatorOutput, oracles: &[OracleCurves]) -> Result<CellMetrics> {
    if oracles.len() != output.q.len() {
        return Err(invalid("one oracle per alpha is required"));
    }
    let first = oracles.first().ok_or_else(|| invalid("no oracle curves"))?;
    if first.grid.len() != output.grid.len() {
        return Err(invalid("oracle and estimate grids differ"));
    }
    let refused = output.refused;
    let q_mae = output
        .q
        .iter()
        .zip(oracles)
        .map(|(q, o)| if refused { None } else { mae_defined(q, &o.q_alpha) })
        .collect();
    let alloc = output
        .q
        .iter()
        .zip(oracles)
        .map(|(q, o)| if refused { None } else { allocation_error(q, &o.q_alpha) })
        .collect();
    let s_mae = match (&output.s, refused) {
        (Some(s), false) => mae_defined(s, &first.s_alpha),
        _ => None,
    };
    Ok(CellMetrics {
        core_mae: mae(&output.core, &first.theta),
        q_mae,
        alloc,
        s_mae,
        regime: if refused { None } else { output.regime() },
        truth_regime: truth_regime(&first.xi_true),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RelativeSummary {
    /// Mean of `(a - b) / b` over pairs.
    pub mean: f64,
    pub ci_lower: f64,
    pub ci_upper: f64,
    pub pairs: usize,
}

/// Paired bootstrap of the mean relative difference `(a - b) / b` with a
/// 90% percentile interval.
/// Pairs with a missing value or a non-positive reference are skipped.
pub fn bootstrap_relative_mae(a: &[Option<f64>], b: &[Option<f64>], reps: usize, seed: u64) -> Result<RelativeSummary> {
    if a.len() != b.len() {
        return Err(Error::Unpaired(format!("{} versus {} cells", a.len(), b.len())));
    }
    if reps == 0 {
        return Err(invalid("bootstrap needs at least one replicate"));
    }
    if reps < MIN_METRIC_BOOTSTRAP {
        log::warn!("only {reps} bootstrap replicates; intervals will be coarse");
    }
    let rel: Vec<f64> = a
        .iter()
        .zip(b)
        .filter_map(|(x, y)| match (x, y) {
            (Some(x), Some(y)) if *y > 0.0 && x.is_finite() => Some((x - y) / y),
            _ => None,
        })
        .collect();
    if rel.is_empty() {
        return Err(Error::Insufficient { needed: 1, got: 0 });
    }
    let n = rel.len();
    let mean = rel.iter().sum::<f64>() / n as f64;
    let mut rng = rng_for(seed, stream::METRIC_BOOTSTRAP);
    let means: Vec<f64> = (0..reps)
        .map(|_| (0..n).map(|_| rel[rng.random_range(0..n)]).sum::<f64>() / n as f64)
        .collect();
    let ws = WeightedSample::uniform(means)?;
    Ok(RelativeSummary {
        mean,
        ci_lower: ws.quantile(0.05)?,
        ci_upper: ws.quantile(0.95)?,
        pairs: n,
    })
}
