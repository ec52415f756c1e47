//! Laplace-bulk + GPD-tail splice likelihood and held-out threshold selection.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dml::MAD_SCALE;
use crate::error::{invalid, Error, Result};
use crate::kernels;
use crate::rng::{rng_for, stream};
use crate::tail::gpd::{gpd_ks_pvalue, gpd_log_density, pwm_fit_sorted};

/// Shape cap applied while scoring candidates; PWM is not identified beyond 1/2.
pub const SCORING_XI_CAP: f64 = 0.49;
pub const MIN_THRESHOLD_SAMPLE: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpliceParams {
    /// Threshold on |r|.
    pub u: f64,
    /// Laplace scale of the bulk.
    pub b: f64,
    pub xi: f64,
    pub sigma: f64,
    pub p_tail: f64,
}

impl SpliceParams {
    pub fn validate(&self) -> Result<()> {
        let ok = self.u > 0.0
            && self.b > 0.0
            && self.sigma > 0.0
            && self.xi.is_finite()
            && (0.0..=1.0).contains(&self.p_tail);
        if ok {
            Ok(())
        } else {
            Err(invalid(format!("invalid splice parameters {self:?}")))
        }
    }

    /// Log-density at one residual.
    pub fn log_density(&self, r: f64) -> f64 {
        let a = r.abs();
        if a <= self.u {
            let bulk_mass = -(-self.u / self.b).exp_m1();
            (1.0 - self.p_tail).ln() - (2.0 * self.b).ln() - a / self.b - bulk_mass.ln()
        } else {
            (0.5 * self.p_tail).ln() + gpd_log_density(a - self.u, self.xi, self.sigma)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpliceScore {
    pub mean_log_density: f64,
    /// Residuals outside the fitted GPD support.
    pub out_of_support: usize,
}

/// Mean log-density of residuals under the splice law.
pub fn splice_loglik(residuals: &[f64], params: &SpliceParams) -> Result<SpliceScore> {
    params.validate()?;
    if residuals.is_empty() {
        return Err(Error::Insufficient { needed: 1, got: 0 });
    }
    let mut total = 0.0;
    let mut out_of_support = 0;
    for &r in residuals {
        let ld = params.log_density(r);
        if ld == f64::NEG_INFINITY {
            out_of_support += 1;
        }
        total += ld;
    }
    Ok(SpliceScore { mean_log_density: total / residuals.len() as f64, out_of_support })
}

/// Mean log-density under a centred Laplace law.
pub fn laplace_loglik(residuals: &[f64], b: f64) -> f64 {
    let n = residuals.len() as f64;
    -(2.0 * b).ln() - residuals.iter().map(|r| r.abs()).sum::<f64>() / (b * n)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdConfig {
    pub grid_size: usize,
    pub n_min_exc: usize,
    pub p_ks_min: f64,
    pub holdout_fraction: f64,
    pub bootstrap_b: usize,
    pub seed: u64,
}

impl Default for ThresholdConfig {
    fn default() -> Self {
        Self { grid_size: 40, n_min_exc: 30, p_ks_min: 0.0, holdout_fraction: 0.5, bootstrap_b: 200, seed: 0 }
    }
}

impl ThresholdConfig {
    pub fn with_seed(seed: u64) -> Self {
        Self { seed, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.grid_size < 3 {
            return Err(invalid("grid size must be at least 3"));
        }
        if self.n_min_exc < 10 {
            return Err(invalid("minimum exceedance count must be at least 10"));
        }
        if !(0.0..=1.0).contains(&self.p_ks_min) {
            return Err(invalid("KS gate must lie in [0,1]"));
        }
        if !(self.holdout_fraction > 0.0 && self.holdout_fraction < 1.0) {
            return Err(invalid("holdout fraction must lie in (0,1)"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CandidateScore {
    pub u: f64,
    pub n_exc_fit: usize,
    pub p_ks: f64,
    pub passed_gates: bool,
    pub holdout_score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdFit {
    pub u_star: f64,
    /// Parameters fitted on the fit half at the selected threshold.
    pub params: SpliceParams,
    pub holdout_score: f64,
    pub null_score: f64,
    /// Exceedances of the selected threshold in the full sample.
    pub n_exc: usize,
    pub candidates: Vec<CandidateScore>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RefusalReason {
    /// No candidate passed the exceedance and KS gates.
    NoCandidate,
    /// The best splice did not beat the Laplace bulk-only law on the holdout.
    LaplaceNull,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ThresholdOutcome {
    Accepted(ThresholdFit),
    Refused(RefusalReason),
}

impl ThresholdOutcome {
    pub fn accepted(&self) -> Option<&ThresholdFit> {
        match self {
            ThresholdOutcome::Accepted(f) => Some(f),
            ThresholdOutcome::Refused(_) => None,
        }
    }
}

/// Candidate thresholds: quantiles of |r| at levels evenly spaced in `[0.5, 1 - n_min/n]`.
pub fn candidate_thresholds(abs_sorted: &[f64], cfg: &ThresholdConfig) -> Vec<f64> {
    let n = abs_sorted.len();
    let top = 1.0 - cfg.n_min_exc as f64 / n as f64;
    if top < 0.5 {
        return Vec::new();
    }
    let j = cfg.grid_size;
    let mut out: Vec<f64> = (0..j)
        .map(|i| {
            let level = 0.5 + (top - 0.5) * i as f64 / (j - 1) as f64;
            let k = ((level * n as f64).ceil() as usize).clamp(1, n);
            abs_sorted[k - 1]
        })
        .collect();
    out.dedup();
    out
}

/// Fits the splice at threshold `u` on `fit` residuals; `None` when PWM fails.
fn fit_splice(fit: &[f64], u: f64) -> Option<(SpliceParams, Vec<f64>)> {
    let mut exc: Vec<f64> = fit.iter().filter(|r| r.abs() > u).map(|r| r.abs() - u).collect();
    exc.sort_by(f64::total_cmp);
    let bulk: Vec<f64> = fit.iter().copied().filter(|r| r.abs() <= u).collect();
    if bulk.len() < 2 || u <= 0.0 {
        return None;
    }
    let b = MAD_SCALE * kernels::mad(&bulk) / std::f64::consts::SQRT_2;
    if !(b > 0.0) {
        return None;
    }
    let pwm = pwm_fit_sorted(&exc).ok()?;
    let a0 = kernels::mean(&exc);
    let xi = pwm.xi.min(SCORING_XI_CAP);
    let sigma = a0 * (1.0 - xi);
    if !(sigma > 0.0) {
        return None;
    }
    let p_tail = exc.len() as f64 / fit.len() as f64;
    Some((SpliceParams { u, b, xi, sigma, p_tail }, exc))
}

/// Held-out composite-likelihood threshold selection with gates and Laplace-null refusal.
pub fn select_threshold(residuals: &[f64], cfg: &ThresholdConfig) -> Result<ThresholdOutcome> {
    cfg.validate()?;
    let n = residuals.len();
    if n < MIN_THRESHOLD_SAMPLE {
        return Err(Error::Insufficient { needed: MIN_THRESHOLD_SAMPLE, got: n });
    }
    if residuals.iter().any(|r| !r.is_finite()) {
        return Err(invalid("non-finite residual"));
    }
    let mut abs_sorted: Vec<f64> = residuals.iter().map(|r| r.abs()).collect();
    abs_sorted.sort_by(f64::total_cmp);
    let candidates = candidate_thresholds(&abs_sorted, cfg);
    if candidates.is_empty() {
        return Ok(ThresholdOutcome::Refused(RefusalReason::NoCandidate));
    }

    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng_for(cfg.seed, stream::SPLIT));
    let n_hold = ((n as f64 * cfg.holdout_fraction).round() as usize).clamp(1, n - 1);
    let (hold_idx, fit_idx) = idx.split_at(n_hold);
    let fit: Vec<f64> = fit_idx.iter().map(|&i| residuals[i]).collect();
    let hold: Vec<f64> = hold_idx.iter().map(|&i| residuals[i]).collect();

    let scored: Vec<Option<(CandidateScore, SpliceParams)>> = candidates
        .par_iter()
        .map(|&u| {
            let (params, exc) = fit_splice(&fit, u)?;
            let p_ks = gpd_ks_pvalue(&exc, params.xi, params.sigma).ok()?;
            let passed = exc.len() >= cfg.n_min_exc && p_ks >= cfg.p_ks_min;
            let holdout_score = splice_loglik(&hold, &params).ok()?.mean_log_density;
            Some((CandidateScore { u, n_exc_fit: exc.len(), p_ks, passed_gates: passed, holdout_score }, params))
        })
        .collect();

    let mut best: Option<(CandidateScore, SpliceParams)> = None;
    for (c, p) in scored.iter().flatten() {
        if c.passed_gates && best.as_ref().is_none_or(|(b, _)| c.holdout_score > b.holdout_score) {
            best = Some((c.clone(), *p));
        }
    }
    let candidates: Vec<CandidateScore> = scored.into_iter().flatten().map(|(c, _)| c).collect();
    let Some((best, params)) = best else {
        return Ok(ThresholdOutcome::Refused(RefusalReason::NoCandidate));
    };
    if !best.holdout_score.is_finite() {
        return Ok(ThresholdOutcome::Refused(RefusalReason::NoCandidate));
    }

    // the bulk law with no tail: same MAD scale rule over the whole fit half
    let b_null = MAD_SCALE * kernels::mad(&fit) / std::f64::consts::SQRT_2;
    let null_score = if b_null > 0.0 { laplace_loglik(&hold, b_null) } else { f64::NEG_INFINITY };
    if best.holdout_score <= null_score {
        return Ok(ThresholdOutcome::Refused(RefusalReason::LaplaceNull));
    }
    let n_exc = abs_sorted.len() - abs_sorted.partition_point(|&a| a <= best.u);
    Ok(ThresholdOutcome::Accepted(ThresholdFit {
        u_star: best.u,
        params,
        holdout_score: best.holdout_score,
        null_score,
        n_exc,
        candidates,
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_for;
    use crate::tail::gpd::{gpd_log_density, gpd_quantile};
    use rand::Rng;

    fn integrate(params: &SpliceParams) -> f64 {
        // Simpson on the bulk, substitution e = s/(1-s) on each tail
        let f = |r: f64| params.log_density(r).exp();
        let simpson = |g: &dyn Fn(f64) -> f64, a: f64, b: f64, m: usize| {
            let h = (b - a) / m as f64;
            let mut s = g(a) + g(b);
            for i in 1..m {
                s += g(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
            }
            s * h / 3.0
        };
        let tail = |e: f64| 0.5 * params.p_tail * gpd_log_density(e, params.xi, params.sigma).exp();
        let bulk = simpson(&f, -params.u, params.u, 20_000);
        let upper = if params.xi < 0.0 { -params.sigma / params.xi } else { f64::INFINITY };
        let tail_one = if upper.is_finite() {
            simpson(&tail, 0.0, upper, 200_000)
        } else {
            let g = |s: f64| {
                if s >= 1.0 {
                    return 0.0;
                }
                let e = s / (1.0 - s);
                tail(e) / ((1.0 - s) * (1.0 - s))
            };
            simpson(&g, 0.0, 1.0, 200_000)
        };
        bulk + 2.0 * tail_one
    }

    #[test]
    fn splice_density_integrates_to_one() {
        let mut rng = rng_for(31, 1);
        for _ in 0..8 {
            let p = SpliceParams {
                u: rng.random_range(0.5..3.0),
                b: rng.random_range(0.3..2.0),
                xi: rng.random_range(-0.4..0.4),
                sigma: rng.random_range(0.3..2.0),
                p_tail: rng.random_range(0.0..0.5),
            };
            let mass = integrate(&p);
            assert!((mass - 1.0).abs() < 1e-6, "{p:?}: {mass}");
        }
    }

    #[test]
    fn degenerate_splice_is_laplace() {
        let r = [0.3, -1.2, 2.5, -0.1, 0.9];
        let p = SpliceParams { u: 1e6, b: 0.8, xi: 0.2, sigma: 1.0, p_tail: 0.0 };
        let s = splice_loglik(&r, &p).unwrap().mean_log_density;
        assert!((s - laplace_loglik(&r, 0.8)).abs() < 1e-12);
    }

    fn mixture(n: usize, p: f64, seed: u64) -> Vec<f64> {
        let mut rng = rng_for(seed, 7);
        let lap = |rng: &mut crate::rng::StreamRng| {
            let u: f64 = rng.random::<f64>() - 0.5;
            -u.signum() * (1.0 - 2.0 * u.abs()).ln()
        };
        (0..n)
            .map(|_| {
                if rng.random::<f64>() < p {
                    let s = if rng.random::<bool>() { 1.0 } else { -1.0 };
                    s * rng.random::<f64>().powf(-1.0 / 1.5)
                } else {
                    lap(&mut rng)
                }
            })
            .collect()
    }

    #[test]
    fn true_parameters_score_better_than_perturbed_shape() {
        let mut wins = 0;
        for seed in 0..10 {
            let mut rng = rng_for(seed, 3);
            let p = SpliceParams { u: 2.0, b: 1.0, xi: 0.4, sigma: 1.0, p_tail: 0.2 };
            let r: Vec<f64> = (0..4000)
                .map(|_| {
                    if rng.random::<f64>() < p.p_tail {
                        let s = if rng.random::<bool>() { 1.0 } else { -1.0 };
                        s * (p.u + gpd_quantile(rng.random::<f64>(), p.xi, p.sigma))
                    } else {
                        loop {
                            let u: f64 = rng.random::<f64>() - 0.5;
                            let v = -u.signum() * (1.0 - 2.0 * u.abs()).ln();
                            if v.abs() <= p.u {
                                break v;
                            }
                        }
                    }
                })
                .collect();
            let worse = SpliceParams { xi: p.xi + 0.3, ..p };
            if splice_loglik(&r, &p).unwrap().mean_log_density > splice_loglik(&r, &worse).unwrap().mean_log_density {
                wins += 1;
            }
        }
        assert!(wins >= 9, "{wins}");
    }

    #[test]
    fn pareto_tail_is_accepted() {
        for seed in 0..3 {
            let r = mixture(5000, 0.1, seed);
            let out = select_threshold(&r, &ThresholdConfig::with_seed(seed)).unwrap();
            let fit = out.accepted().expect("accepted");
            assert!(fit.n_exc >= 30);
            assert!(fit.u_star >= kernels::median(&r.iter().map(|v| v.abs()).collect::<Vec<_>>()));
        }
    }

    #[test]
    fn too_few_exceedances_refuse() {
        let r = mixture(100, 0.1, 1);
        let cfg = ThresholdConfig { n_min_exc: 60, ..ThresholdConfig::default() };
        assert_eq!(select_threshold(&r, &cfg).unwrap(), ThresholdOutcome::Refused(RefusalReason::NoCandidate));
    }

    #[test]
    fn small_samples_error() {
        assert!(select_threshold(&[1.0; 50], &ThresholdConfig::default()).is_err());
        let bad = ThresholdConfig { grid_size: 2, ..ThresholdConfig::default() };
        assert!(select_threshold(&mixture(500, 0.1, 1), &bad).is_err());
    }

    #[test]
    fn candidates_are_quantiles_in_range() {
        let mut a: Vec<f64> = (1..=1000).map(f64::from).collect();
        a.sort_by(f64::total_cmp);
        let c = candidate_thresholds(&a, &ThresholdConfig::default());
        assert_eq!(c.len(), 40);
        assert_eq!(c[0], 500.0);
        assert_eq!(*c.last().unwrap(), 970.0);
    }

    #[test]
    fn threshold_is_scale_equivariant() {
        let r = mixture(3000, 0.1, 9);
        let scaled: Vec<f64> = r.iter().map(|v| v * 3.0).collect();
        let cfg = ThresholdConfig::with_seed(2);
        let a = select_threshold(&r, &cfg).unwrap();
        let b = select_threshold(&scaled, &cfg).unwrap();
        let (a, b) = (a.accepted().unwrap(), b.accepted().unwrap());
        assert!((b.u_star - 3.0 * a.u_star).abs() < 1e-10 * b.u_star);
        assert_eq!(a.n_exc, b.n_exc);
    }
}
