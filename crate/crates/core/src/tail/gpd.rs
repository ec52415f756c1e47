//! Generalized Pareto utilities: PWM fit, CDF/density, KS p-value,
//! bootstrap interval on the shape, return levels.

use rand::Rng;
use rayon::prelude::*;

use crate::error::{invalid, Error, Result};
use crate::rng::{mix_seed, rng_for, stream};

pub const MIN_PWM_EXCEEDANCES: usize = 5;
/// Below this |xi| the exponential limit is used.
pub const XI_ZERO_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GpdFit {
    pub xi: f64,
    pub sigma: f64,
}

/// Probability-weighted-moment fit on exceedances (values above the threshold, shifted to 0).
pub fn pwm_fit(exceedances: &[f64]) -> Result<GpdFit> {
    let mut e = exceedances.to_vec();
    e.sort_by(f64::total_cmp);
    pwm_fit_sorted(&e)
}

/// `pwm_fit` on an ascending slice.
pub fn pwm_fit_sorted(e: &[f64]) -> Result<GpdFit> {
    if e.len() < MIN_PWM_EXCEEDANCES {
        return Err(Error::Insufficient { needed: MIN_PWM_EXCEEDANCES, got: e.len() });
    }
    pwm_moments_fit(e)
}

/// Moment algebra on an ascending slice without the sample-size guard; needs at least two points.
pub fn pwm_moments_fit(e: &[f64]) -> Result<GpdFit> {
    let n = e.len();
    if n < 2 {
        return Err(Error::Insufficient { needed: 2, got: n });
    }
    if e.iter().any(|v| !v.is_finite()) {
        return Err(invalid("non-finite exceedance"));
    }
    let nf = n as f64;
    let a0 = e.iter().sum::<f64>() / nf;
    let a1 = e
        .iter()
        .enumerate()
        .map(|(j, &v)| (nf - (j + 1) as f64) / (nf - 1.0) * v)
        .sum::<f64>()
        / nf;
    let denom = a0 - 2.0 * a1;
    if denom == 0.0 || !(denom.abs() > 1e-14 * a0.abs()) {
        return Err(Error::InvalidFit("a0 - 2 a1 vanishes".into()));
    }
    let xi = 2.0 - a0 / denom;
    let sigma = 2.0 * a0 * a1 / denom;
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::InvalidFit(format!("non-positive scale {sigma}")));
    }
    Ok(GpdFit { xi, sigma })
}

pub fn gpd_cdf(e: f64, xi: f64, sigma: f64) -> f64 {
    if e <= 0.0 {
        return 0.0;
    }
    let z = e / sigma;
    if xi.abs() < XI_ZERO_TOL {
        return 1.0 - (-z).exp();
    }
    let base = 1.0 + xi * z;
    if base <= 0.0 {
        return 1.0;
    }
    1.0 - base.powf(-1.0 / xi)
}

/// Log-density of a GPD at `e >= 0`; `-inf` outside the support.
pub fn gpd_log_density(e: f64, xi: f64, sigma: f64) -> f64 {
    if e < 0.0 {
        return f64::NEG_INFINITY;
    }
    let z = e / sigma;
    if xi.abs() < XI_ZERO_TOL {
        return -sigma.ln() - z;
    }
    let base = 1.0 + xi * z;
    if base <= 0.0 {
        return f64::NEG_INFINITY;
    }
    -sigma.ln() - (1.0 / xi + 1.0) * base.ln()
}

pub fn gpd_quantile(p: f64, xi: f64, sigma: f64) -> f64 {
    if xi.abs() < XI_ZERO_TOL {
        -sigma * (1.0 - p).ln()
    } else {
        sigma / xi * ((1.0 - p).powf(-xi) - 1.0)
    }
}

/// Asymptotic Kolmogorov survival function `P(K > lambda)`.
pub fn kolmogorov_survival(lambda: f64) -> f64 {
    if lambda <= 0.0 {
        return 1.0;
    }
    if lambda < 0.2 {
        // the alternating series converges slowly here and the value is 1 to machine precision
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..=100 {
        let kf = k as f64;
        let term = (-2.0 * kf * kf * lambda * lambda).exp();
        sum += if k % 2 == 1 { term } else { -term };
        if term < 1e-17 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// One-sample KS p-value of exceedances against a GPD, asymptotic law at `sqrt(n) D`.
pub fn gpd_ks_pvalue(exceedances: &[f64], xi: f64, sigma: f64) -> Result<f64> {
    if !(sigma > 0.0) {
        return Err(invalid("sigma must be positive"));
    }
    if exceedances.is_empty() {
        return Err(Error::Insufficient { needed: 1, got: 0 });
    }
    let mut e = exceedances.to_vec();
    e.sort_by(f64::total_cmp);
    let n = e.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &v) in e.iter().enumerate() {
        let f = gpd_cdf(v, xi, sigma);
        d = d.max((i + 1) as f64 / n - f).max(f - i as f64 / n);
    }
    Ok(kolmogorov_survival(n.sqrt() * d))
}

/// 90% percentile bootstrap interval on the PWM shape.
///
/// The interval is widened if needed so it brackets the full-sample estimate.
pub fn bootstrap_xi_ci(exceedances: &[f64], b: usize, seed: u64) -> Result<(f64, f64)> {
    if b < 50 {
        return Err(invalid(format!("need at least 50 bootstrap resamples, got {b}")));
    }
    let point = pwm_fit(exceedances)?.xi;
    let n = exceedances.len();
    let draws: Vec<Option<f64>> = (0..b)
        .into_par_iter()
        .map(|rep| {
            let mut rng = rng_for(mix_seed(seed, rep as u64), stream::BOOTSTRAP);
            let mut e: Vec<f64> = (0..n).map(|_| exceedances[rng.random_range(0..n)]).collect();
            e.sort_by(f64::total_cmp);
            pwm_fit_sorted(&e).ok().map(|f| f.xi)
        })
        .collect();
    let mut ok: Vec<f64> = draws.into_iter().flatten().collect();
    let failed = b - ok.len();
    if 2 * failed > b {
        return Err(Error::InvalidFit(format!("{failed} of {b} bootstrap fits invalid")));
    }
    if failed > 0 {
        log::debug!("{failed} of {b} bootstrap PWM fits skipped");
    }
    ok.sort_by(f64::total_cmp);
    let lo = order_stat(&ok, 0.05);
    let hi = order_stat(&ok, 0.95);
    Ok((lo.min(point), hi.max(point)))
}

/// Smallest order statistic whose empirical CDF reaches `tau`.
fn order_stat(sorted: &[f64], tau: f64) -> f64 {
    let n = sorted.len();
    let k = ((tau * n as f64).ceil() as usize).clamp(1, n);
    sorted[k - 1]
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReturnLevel {
    pub value: f64,
    /// The level fell below the threshold (`q` larger than the exceedance rate).
    pub below_threshold: bool,
}

/// `u + (sigma/xi) [ (n_exc / (q n))^xi - 1 ]`, with the log limit for |xi| < 1e-6.
pub fn return_level(u: f64, xi: f64, sigma: f64, n_exc: usize, n: usize, q: f64) -> Result<ReturnLevel> {
    if !(q > 0.0 && q < 1.0) {
        return Err(invalid(format!("q must lie in (0,1), got {q}")));
    }
    if n_exc == 0 || n_exc > n {
        return Err(invalid(format!("need 1 <= n_exc <= n, got {n_exc} of {n}")));
    }
    if !(sigma > 0.0) {
        return Err(invalid("sigma must be positive"));
    }
    let ratio = n_exc as f64 / (q * n as f64);
    let value = if xi.abs() < XI_ZERO_TOL {
        u + sigma * ratio.ln()
    } else {
        u + sigma / xi * (ratio.powf(xi) - 1.0)
    };
    Ok(ReturnLevel { value, below_threshold: value < u })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, Exp};

    pub(crate) fn gpd_draws(xi: f64, sigma: f64, n: usize, seed: u64) -> Vec<f64> {
        let mut rng = rng_for(seed, 99);
        (0..n).map(|_| gpd_quantile(rng.random::<f64>(), xi, sigma)).collect()
    }

    #[test]
    fn pwm_hand_example() {
        let f = pwm_fit(&[4.0, 2.0, 1.0, 3.0, 2.5]).unwrap();
        // oracle: direct evaluation of the moment formulas
        let e = [1.0, 2.0, 2.5, 3.0, 4.0];
        let a0 = e.iter().sum::<f64>() / 5.0;
        let a1 = e.iter().enumerate().map(|(j, v)| (4 - j) as f64 / 4.0 * v).sum::<f64>() / 5.0;
        assert!((f.xi - (2.0 - a0 / (a0 - 2.0 * a1))).abs() < 1e-12);
        assert!((f.sigma - 2.0 * a0 * a1 / (a0 - 2.0 * a1)).abs() < 1e-12);
    }

    #[test]
    fn pwm_equally_spaced_is_uniform_like() {
        let e: Vec<f64> = (1..=4).map(f64::from).collect();
        assert!(matches!(pwm_fit(&e), Err(Error::Insufficient { .. })));
        let n = 2001;
        let e: Vec<f64> = (1..=n).map(|i| i as f64).collect();
        let f = pwm_fit(&e).unwrap();
        assert!((f.xi + 1.0).abs() < 1e-9, "{f:?}");
    }

    #[test]
    fn pwm_four_point_formula() {
        let f = pwm_moments_fit(&[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert!((f.xi + 1.0).abs() < 1e-12);
        assert!((f.sigma - 5.0).abs() < 1e-12);
    }

    #[test]
    fn pwm_recovers_gpd() {
        let e = gpd_draws(0.5, 1.0, 20_000, 3);
        let f = pwm_fit(&e).unwrap();
        assert!((f.xi - 0.5).abs() < 0.05, "{f:?}");
        assert!((f.sigma - 1.0).abs() < 0.05, "{f:?}");
    }

    #[test]
    fn pwm_recovers_exponential() {
        let mut rng = rng_for(4, 1);
        let exp = Exp::new(0.5).unwrap();
        let e: Vec<f64> = (0..20_000).map(|_| exp.sample(&mut rng)).collect();
        let f = pwm_fit(&e).unwrap();
        assert!(f.xi.abs() < 0.04, "{f:?}");
    }

    #[test]
    fn pwm_degenerate_errors() {
        assert!(pwm_fit(&[2.0; 10]).is_err());
        assert!(pwm_fit(&[1.0, 2.0]).is_err());
    }

    #[test]
    fn pwm_scale_equivariant() {
        let e = gpd_draws(0.3, 2.0, 500, 8);
        let a = pwm_fit(&e).unwrap();
        let scaled: Vec<f64> = e.iter().map(|v| v * 7.5).collect();
        let b = pwm_fit(&scaled).unwrap();
        assert!((a.xi - b.xi).abs() < 1e-10);
        assert!((b.sigma - 7.5 * a.sigma).abs() < 1e-10 * b.sigma);
    }

    #[test]
    fn ks_perfect_fit_has_high_p() {
        let n = 400;
        let e: Vec<f64> = (1..=n).map(|i| gpd_quantile((i as f64 - 0.5) / n as f64, 0.3, 1.0)).collect();
        assert!(gpd_ks_pvalue(&e, 0.3, 1.0).unwrap() > 0.99);
    }

    #[test]
    fn ks_is_mostly_not_rejecting_under_the_null() {
        let mut pass = 0;
        for seed in 0..100 {
            let e = gpd_draws(0.2, 1.0, 1000, 1000 + seed);
            let f = pwm_fit(&e).unwrap();
            if gpd_ks_pvalue(&e, f.xi, f.sigma).unwrap() > 0.01 {
                pass += 1;
            }
        }
        assert!(pass >= 95, "{pass}");
    }

    #[test]
    fn ks_detects_gross_misfit() {
        let mut rng = rng_for(5, 1);
        let exp = Exp::new(1.0).unwrap();
        let e: Vec<f64> = (0..2000).map(|_| exp.sample(&mut rng)).collect();
        assert!(gpd_ks_pvalue(&e, 0.9, 1.0).unwrap() < 0.05);
    }

    #[test]
    fn ks_support_violation_counts_as_one() {
        assert_eq!(gpd_cdf(5.0, -0.5, 1.0), 1.0);
        assert!(gpd_ks_pvalue(&[5.0; 50], -0.5, 1.0).unwrap() < 1e-6);
    }

    #[test]
    fn kolmogorov_reference_values() {
        // tabulated critical values of the Kolmogorov distribution
        assert!((kolmogorov_survival(1.358) - 0.05).abs() < 1e-3);
        assert!((kolmogorov_survival(1.628) - 0.01).abs() < 1e-3);
        assert!((kolmogorov_survival(1.224) - 0.10).abs() < 1e-3);
    }

    #[test]
    fn bootstrap_ci_brackets_and_is_deterministic() {
        let e = gpd_draws(0.5, 1.0, 300, 11);
        let point = pwm_fit(&e).unwrap().xi;
        let a = bootstrap_xi_ci(&e, 200, 1).unwrap();
        let b = bootstrap_xi_ci(&e, 200, 1).unwrap();
        assert_eq!(a, b);
        assert!(a.0 <= point && point <= a.1);
        assert!(bootstrap_xi_ci(&e, 10, 1).is_err());
        assert!(bootstrap_xi_ci(&[3.0; 40], 100, 1).is_err());
    }

    #[test]
    fn bootstrap_ci_coverage() {
        let reps = 200;
        let covered = (0..reps)
            .filter(|&s| {
                let e = gpd_draws(0.5, 1.0, 2000, 500 + s);
                let (lo, hi) = bootstrap_xi_ci(&e, 200, s).unwrap();
                lo <= 0.5 && 0.5 <= hi
            })
            .count();
        let rate = covered as f64 / reps as f64;
        assert!((rate - 0.9).abs() <= 0.10 + 1e-12, "coverage {rate}");
    }

    #[test]
    fn return_level_examples() {
        let r = return_level(3.0, 0.4, 2.0, 100, 1000, 0.1).unwrap();
        assert!((r.value - 3.0).abs() < 1e-12);
        let r = return_level(1111.0, 0.75, 1000.0, 50, 1000, 0.01).unwrap();
        let oracle = 1111.0 + 1000.0 / 0.75 * (5f64.powf(0.75) - 1.0);
        assert!((r.value - oracle).abs() < 1e-9);
        assert!((r.value - 4237.0).abs() < 2.0);
        let r = return_level(5.0, 0.0, 2.0, 100, 1000, 0.1 / std::f64::consts::E).unwrap();
        assert!((r.value - 7.0).abs() < 1e-12);
        let r = return_level(5.0, 0.3, 2.0, 10, 1000, 0.5).unwrap();
        assert!(r.below_threshold);
        assert!(return_level(5.0, 0.3, 2.0, 10, 1000, 1.0).is_err());
    }

    #[test]
    fn return_level_is_continuous_at_zero_shape() {
        let a = return_level(1.0, 2e-6, 1.5, 80, 1000, 0.001).unwrap().value;
        let b = return_level(1.0, 0.0, 1.5, 80, 1000, 0.001).unwrap().value;
        assert!((a - b).abs() < 1e-4);
    }
}
