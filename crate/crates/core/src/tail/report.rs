//! The global tail report assembled from threshold selection and the PWM fit.

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::error::Result;
use crate::tail::gpd::{bootstrap_xi_ci, gpd_ks_pvalue, pwm_fit, return_level};
use crate::tail::threshold::{select_threshold, ThresholdConfig, ThresholdOutcome};

pub const REPORT_LEVELS: [f64; 2] = [0.01, 0.001];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    Frechet,
    Weibull,
    Gumbel,
}

impl Regime {
    /// Frechet iff the interval lies above 0, Weibull iff below, else Gumbel.
    pub fn from_ci(lower: f64, upper: f64) -> Self {
        if lower > 0.0 {
            Regime::Frechet
        } else if upper < 0.0 {
            Regime::Weibull
        } else {
            Regime::Gumbel
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Regime::Frechet => "frechet",
            Regime::Weibull => "weibull",
            Regime::Gumbel => "gumbel",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TailEstimate {
    pub u_star: f64,
    pub xi_pwm: f64,
    pub xi_ci: (f64, f64),
    pub sigma_pwm: f64,
    pub p_ks: f64,
    pub regime: Regime,
    /// Return levels at `REPORT_LEVELS`, in that order.
    pub return_levels: [f64; 2],
    pub n_exc: usize,
    pub n: usize,
}

/// `None` means the tail was refused.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TailReport {
    pub estimate: Option<TailEstimate>,
}

impl TailReport {
    pub fn refused() -> Self {
        Self { estimate: None }
    }

    pub fn is_refused(&self) -> bool {
        self.estimate.is_none()
    }

    /// Flat JSON object; a refused report carries only `"refused": true`.
    pub fn to_json(&self) -> Value {
        let Some(e) = &self.estimate else {
            return json!({ "refused": true });
        };
        let mut m = Map::new();
        m.insert("refused".into(), json!(false));
        m.insert("u_star".into(), json!(e.u_star));
        m.insert("xi_pwm".into(), json!(e.xi_pwm));
        m.insert("xi_ci_lower".into(), json!(e.xi_ci.0));
        m.insert("xi_ci_upper".into(), json!(e.xi_ci.1));
        m.insert("sigma_pwm".into(), json!(e.sigma_pwm));
        m.insert("p_ks".into(), json!(e.p_ks));
        m.insert("regime".into(), json!(e.regime.as_str()));
        m.insert("return_level_0.01".into(), json!(e.return_levels[0]));
        m.insert("return_level_0.001".into(), json!(e.return_levels[1]));
        m.insert("n_exc".into(), json!(e.n_exc));
        m.insert("n".into(), json!(e.n));
        Value::Object(m)
    }
}

/// Threshold selection, full-exceedance PWM fit, KS p-value, bootstrap interval,
/// regime label and return levels. Failures after selection become refusals.
pub fn build_tail_report(residuals: &[f64], cfg: &ThresholdConfig) -> Result<TailReport> {
    let fit = match select_threshold(residuals, cfg)? {
        ThresholdOutcome::Accepted(f) => f,
        ThresholdOutcome::Refused(reason) => {
            log::debug!("tail refused: {reason:?}");
            return Ok(TailReport::refused());
        }
    };
    let u = fit.u_star;
    let exc: Vec<f64> = residuals.iter().filter(|r| r.abs() > u).map(|r| r.abs() - u).collect();
    let Ok(pwm) = pwm_fit(&exc) else {
        return Ok(TailReport::refused());
    };
    let Ok(p_ks) = gpd_ks_pvalue(&exc, pwm.xi, pwm.sigma) else {
        return Ok(TailReport::refused());
    };
    let Ok(ci) = bootstrap_xi_ci(&exc, cfg.bootstrap_b, cfg.seed) else {
        return Ok(TailReport::refused());
    };
    let n = residuals.len();
    let mut levels = [0.0; 2];
    for (slot, &q) in levels.iter_mut().zip(&REPORT_LEVELS) {
        *slot = return_level(u, pwm.xi, pwm.sigma, exc.len(), n, q)?.value;
    }
    Ok(TailReport {
        estimate: Some(TailEstimate {
            u_star: u,
            xi_pwm: pwm.xi,
            xi_ci: ci,
            sigma_pwm: pwm.sigma,
            p_ks,
            regime: Regime::from_ci(ci.0, ci.1),
            return_levels: levels,
            n_exc: exc.len(),
            n,
        }),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_for;
    use rand::Rng;
    use rand_distr::{Distribution, Normal};

    fn contaminated(n: usize, seed: u64) -> Vec<f64> {
        let normal = Normal::new(0.0, 1.0).unwrap();
        let mut rng = rng_for(seed, 12);
        (0..n)
            .map(|_| {
                if rng.random::<f64>() < 0.1 {
                    let s = if rng.random::<bool>() { 1.0 } else { -1.0 };
                    s * rng.random::<f64>().powf(-1.0 / 1.5)
                } else {
                    normal.sample(&mut rng)
                }
            })
            .collect()
    }

    #[test]
    fn regime_rule() {
        assert_eq!(Regime::from_ci(0.1, 0.5), Regime::Frechet);
        assert_eq!(Regime::from_ci(-0.5, -0.1), Regime::Weibull);
        assert_eq!(Regime::from_ci(-0.1, 0.2), Regime::Gumbel);
        assert_eq!(Regime::from_ci(0.0, 0.2), Regime::Gumbel);
    }

    #[test]
    fn refused_report_has_only_the_flag() {
        let v = TailReport::refused().to_json();
        assert_eq!(v, json!({"refused": true}));
    }

    #[test]
    fn pareto_contamination_is_frechet() {
        let frechet = (0..5)
            .filter(|&s| {
                let r = build_tail_report(&contaminated(5000, s), &ThresholdConfig::with_seed(s)).unwrap();
                r.estimate.is_some_and(|e| e.regime == Regime::Frechet)
            })
            .count();
        assert!(frechet >= 4, "{frechet}");
    }

    #[test]
    fn gaussian_is_not_frechet() {
        let normal = Normal::new(0.0, 1.0).unwrap();
        for s in 0..5 {
            let mut rng = rng_for(s, 13);
            let r: Vec<f64> = (0..3000).map(|_| normal.sample(&mut rng)).collect();
            let rep = build_tail_report(&r, &ThresholdConfig::with_seed(s)).unwrap();
            assert!(rep.estimate.is_none_or(|e| e.regime != Regime::Frechet));
        }
    }

    #[test]
    fn report_is_scale_equivariant() {
        let r = contaminated(3000, 3);
        let scaled: Vec<f64> = r.iter().map(|v| v * 2.5).collect();
        let cfg = ThresholdConfig::with_seed(4);
        let a = build_tail_report(&r, &cfg).unwrap().estimate.unwrap();
        let b = build_tail_report(&scaled, &cfg).unwrap().estimate.unwrap();
        let close = |x: f64, y: f64| (x - y).abs() <= 1e-10 * y.abs().max(1.0);
        assert!(close(2.5 * a.u_star, b.u_star));
        assert!(close(a.xi_pwm, b.xi_pwm));
        assert!(close(2.5 * a.sigma_pwm, b.sigma_pwm));
        assert!(close(2.5 * a.return_levels[0], b.return_levels[0]));
        assert!(close(2.5 * a.return_levels[1], b.return_levels[1]));
    }

    #[test]
    fn json_keys_are_flat() {
        let rep = build_tail_report(&contaminated(3000, 1), &ThresholdConfig::with_seed(1)).unwrap();
        let v = rep.to_json();
        let obj = v.as_object().unwrap();
        for key in ["refused", "u_star", "xi_pwm", "xi_ci_lower", "xi_ci_upper", "sigma_pwm", "p_ks", "regime", "return_level_0.01", "return_level_0.001"] {
            assert!(obj.contains_key(key), "{key}");
        }
        assert!(obj.values().all(|x| !x.is_object() && !x.is_array()));
    }
}
