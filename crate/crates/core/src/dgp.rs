//! Synthetic data-generating processes.
//!
//! Common frame: `X ~ N(0, I_5)`, `T ~ Uniform[-2, 2]` independent of `X`,
//! `Y = theta(T) + 0.5 * X_1 + eps` with `eps ~ N(0, 1)`. Each process
//! replaces `eps` by a contamination draw with probability `p` under its own
//! rule. The `confounded` process draws `T = 0.6 X_0 + N(0, 1)` instead and
//! contaminates only units with `X_0 < 0`.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal, StudentT};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::kernels;
use crate::rng::{rng_for, stream, StreamRng};

/// Number of synthetic covariates.
pub const N_COVARIATES: usize = 5;

/// Pareto shape of the heavy contamination component.
const HEAVY_ALPHA: f64 = 1.5;
/// Pareto shape of the lighter contamination component.
const LIGHT_ALPHA: f64 = 3.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DgpName {
    Clean,
    SinusoidalPareto,
    SinusoidalAsymmetric,
    SinusoidalHeavytail,
    SinusoidalTwoParetos,
    RegimeSwitch,
    ParetoPlusGaussian,
    Heteroskedastic,
    TLocalised,
    MultiContext,
    Confounded,
}

impl DgpName {
    pub const PANEL: [DgpName; 10] = [
        DgpName::Clean,
        DgpName::SinusoidalPareto,
        DgpName::SinusoidalAsymmetric,
        DgpName::SinusoidalHeavytail,
        DgpName::SinusoidalTwoParetos,
        DgpName::RegimeSwitch,
        DgpName::ParetoPlusGaussian,
        DgpName::Heteroskedastic,
        DgpName::TLocalised,
        DgpName::MultiContext,
    ];

    /// Processes whose contamination puts a Pareto-type (Frechet-domain) tail on most of the grid.
    pub const HEAVY: [DgpName; 6] = [
        DgpName::SinusoidalPareto,
        DgpName::SinusoidalHeavytail,
        DgpName::SinusoidalTwoParetos,
        DgpName::RegimeSwitch,
        DgpName::ParetoPlusGaussian,
        DgpName::MultiContext,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            DgpName::Clean => "clean",
            DgpName::SinusoidalPareto => "sinusoidal_pareto",
            DgpName::SinusoidalAsymmetric => "sinusoidal_asymmetric",
            DgpName::SinusoidalHeavytail => "sinusoidal_heavytail",
            DgpName::SinusoidalTwoParetos => "sinusoidal_two_paretos",
            DgpName::RegimeSwitch => "regime_switch",
            DgpName::ParetoPlusGaussian => "pareto_plus_gaussian",
            DgpName::Heteroskedastic => "heteroskedastic",
            DgpName::TLocalised => "t_localised",
            DgpName::MultiContext => "multi_context",
            DgpName::Confounded => "confounded",
        }
    }

    /// True tail shape of `Y(t)` at treatment `t` under contamination level `p`.
    pub fn xi_true(self, p: f64, t: f64) -> f64 {
        let heavy = 1.0 / HEAVY_ALPHA;
        if p <= 0.0 {
            return 0.0;
        }
        match self {
            DgpName::Clean | DgpName::SinusoidalAsymmetric | DgpName::Heteroskedastic => 0.0,
            DgpName::SinusoidalHeavytail => 0.5,
            DgpName::SinusoidalTwoParetos => {
                if t < 0.0 {
                    heavy
                } else {
                    1.0 / LIGHT_ALPHA
                }
            }
            DgpName::TLocalised => {
                if (t - 1.0).abs() < 0.3 {
                    heavy
                } else {
                    0.0
                }
            }
            // mixtures take the largest component index
            DgpName::SinusoidalPareto
            | DgpName::RegimeSwitch
            | DgpName::ParetoPlusGaussian
            | DgpName::MultiContext
            | DgpName::Confounded => heavy,
        }
    }
}

impl fmt::Display for DgpName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DgpName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        DgpName::PANEL
            .iter()
            .chain(std::iter::once(&DgpName::Confounded))
            .find(|d| d.as_str() == s)
            .copied()
            .ok_or_else(|| Error::UnknownName(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DgpSpec {
    pub name: DgpName,
    pub contamination_p: f64,
    pub n: usize,
    pub seed: u64,
}

impl DgpSpec {
    pub fn new(name: DgpName, contamination_p: f64, n: usize, seed: u64) -> Self {
        Self { name, contamination_p, n, seed }
    }
}

/// Observed data: covariates (row-major, `d` columns), treatment, outcome.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    x: Vec<f64>,
    d: usize,
    pub t: Vec<f64>,
    pub y: Vec<f64>,
}

impl Sample {
    pub fn new(x: Vec<f64>, d: usize, t: Vec<f64>, y: Vec<f64>) -> Result<Self> {
        let n = t.len();
        if y.len() != n || x.len() != n * d || d == 0 {
            return Err(invalid(format!(
                "inconsistent sample shape: x {} (d = {d}), t {n}, y {}",
                x.len(),
                y.len()
            )));
        }
        if x.iter().chain(&t).chain(&y).any(|v| !v.is_finite()) {
            return Err(invalid("sample contains non-finite values"));
        }
        Ok(Self { x, d, t, y })
    }

    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    pub fn n_covariates(&self) -> usize {
        self.d
    }

    pub fn x_row(&self, i: usize) -> &[f64] {
        &self.x[i * self.d..(i + 1) * self.d]
    }

    pub fn x_col(&self, j: usize) -> Vec<f64> {
        (0..self.len()).map(|i| self.x[i * self.d + j]).collect()
    }

    pub fn x_flat(&self) -> &[f64] {
        &self.x
    }

    /// Same sample with `c` added to every outcome.
    pub fn shift_outcome(&self, c: f64) -> Self {
        let mut out = self.clone();
        out.y.iter_mut().for_each(|v| *v += c);
        out
    }

    /// Same sample with every outcome multiplied by `c`.
    pub fn scale_outcome(&self, c: f64) -> Self {
        let mut out = self.clone();
        out.y.iter_mut().for_each(|v| *v *= c);
        out
    }
}

/// `sin(pi t / 2) + t / 2`.
pub fn structural_theta(t: f64) -> f64 {
    (PI * t / 2.0).sin() + t / 2.0
}

fn pareto_magnitude(rng: &mut StreamRng, alpha: f64) -> f64 {
    let u: f64 = 1.0 - rng.random::<f64>();
    u.powf(-1.0 / alpha)
}

fn signed_pareto(rng: &mut StreamRng, alpha: f64) -> f64 {
    let m = pareto_magnitude(rng, alpha);
    if rng.random::<bool>() {
        m
    } else {
        -m
    }
}

fn normal(rng: &mut StreamRng) -> f64 {
    StandardNormal.sample(rng)
}

/// Noise term for one unit with treatment `t` and covariates `x`.
fn draw_noise(name: DgpName, p: f64, t: f64, x: &[f64], rng: &mut StreamRng) -> f64 {
    let base = normal(rng);
    let hit = |rng: &mut StreamRng, prob: f64| prob > 0.0 && rng.random::<f64>() < prob;
    match name {
        DgpName::Clean => base,
        DgpName::Heteroskedastic => (1.0 + t.abs()) * base,
        DgpName::SinusoidalPareto => {
            if hit(rng, p) {
                signed_pareto(rng, HEAVY_ALPHA)
            } else {
                base
            }
        }
        DgpName::SinusoidalAsymmetric => {
            if hit(rng, p) {
                6.0 + normal(rng)
            } else {
                base
            }
        }
        DgpName::SinusoidalHeavytail => {
            if hit(rng, p) {
                StudentT::new(2.0).expect("valid dof").sample(rng)
            } else {
                base
            }
        }
        DgpName::SinusoidalTwoParetos => {
            if hit(rng, p) {
                signed_pareto(rng, if t < 0.0 { HEAVY_ALPHA } else { LIGHT_ALPHA })
            } else {
                base
            }
        }
        DgpName::RegimeSwitch => {
            if x[2] > 0.0 && hit(rng, (2.0 * p).min(1.0)) {
                signed_pareto(rng, HEAVY_ALPHA)
            } else {
                base
            }
        }
        DgpName::ParetoPlusGaussian => {
            if hit(rng, p) {
                if rng.random::<bool>() {
                    signed_pareto(rng, HEAVY_ALPHA)
                } else {
                    5.0 * normal(rng)
                }
            } else {
                base
            }
        }
        DgpName::TLocalised => {
            if (t - 1.0).abs() < 0.3 && hit(rng, p) {
                signed_pareto(rng, HEAVY_ALPHA)
            } else {
                base
            }
        }
        DgpName::MultiContext => {
            if hit(rng, p) {
                signed_pareto(rng, if x[1] > 0.0 { HEAVY_ALPHA } else { LIGHT_ALPHA })
            } else {
                base
            }
        }
        DgpName::Confounded => {
            if x[0] < 0.0 && hit(rng, p) {
                signed_pareto(rng, HEAVY_ALPHA)
            } else {
                base
            }
        }
    }
}

fn draw_covariates(rng: &mut StreamRng, out: &mut [f64]) {
    for v in out.iter_mut() {
        *v = normal(rng);
    }
}

fn outcome(t: f64, x: &[f64], eps: f64) -> f64 {
    structural_theta(t) + 0.5 * x[1] + eps
}

fn check_spec(spec: &DgpSpec) -> Result<()> {
    if spec.n == 0 {
        return Err(invalid("sample size must be at least 1"));
    }
    if !(0.0..=1.0).contains(&spec.contamination_p) {
        return Err(invalid(format!(
            "contamination probability {} outside [0, 1]",
            spec.contamination_p
        )));
    }
    Ok(())
}

/// Draw an observational sample; deterministic in the spec.
pub fn generate(spec: &DgpSpec) -> Result<Sample> {
    check_spec(spec)?;
    let n = spec.n;
    let mut rng = rng_for(spec.seed, stream::GENERATE);
    let mut x = vec![0.0; n * N_COVARIATES];
    let mut t = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    for i in 0..n {
        let row = &mut x[i * N_COVARIATES..(i + 1) * N_COVARIATES];
        draw_covariates(&mut rng, row);
        let ti = match spec.name {
            DgpName::Confounded => 0.6 * row[0] + normal(&mut rng),
            _ => rng.random_range(-2.0..2.0),
        };
        let eps = draw_noise(spec.name, spec.contamination_p, ti, row, &mut rng);
        y.push(outcome(ti, row, eps));
        t.push(ti);
    }
    Sample::new(x, N_COVARIATES, t, y)
}

/// Interventional reference curves on a treatment grid.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleCurves {
    pub grid: Vec<f64>,
    /// Structural ADRF `theta(t)`.
    pub theta: Vec<f64>,
    /// Monte-Carlo mean of `Y(t)`.
    pub mean_y: Vec<f64>,
    pub alpha: f64,
    /// Empirical upper `alpha` quantile of `Y(t)`.
    pub q_alpha: Vec<f64>,
    /// Empirical `E[Y(t) | Y(t) > Q_alpha(t)]`.
    pub s_alpha: Vec<f64>,
    pub xi_true: Vec<f64>,
}

/// Draw `n_oracle` interventional outcomes with `T` forced to each grid value.
pub fn oracle_curves(
    spec: &DgpSpec,
    grid: &[f64],
    alpha: f64,
    n_oracle: usize,
    seed: u64,
) -> Result<OracleCurves> {
    check_spec(spec)?;
    if !(alpha > 0.0 && alpha < 0.5) {
        return Err(invalid(format!("alpha must lie in (0, 0.5), got {alpha}")));
    }
    if n_oracle < 1000 {
        return Err(Error::Insufficient { needed: 1000, got: n_oracle });
    }
    let per_point: Vec<(f64, f64, f64)> = grid
        .par_iter()
        .enumerate()
        .map(|(k, &t)| {
            let mut rng = rng_for(seed, stream::ORACLE ^ ((k as u64 + 1) << 8));
            let mut x = [0.0; N_COVARIATES];
            let mut draws = Vec::with_capacity(n_oracle);
            for _ in 0..n_oracle {
                draw_covariates(&mut rng, &mut x);
                let eps = draw_noise(spec.name, spec.contamination_p, t, &x, &mut rng);
                draws.push(outcome(t, &x, eps));
            }
            let mean = kernels::mean(&draws);
            draws.sort_by(f64::total_cmp);
            let k_q = ((1.0 - alpha) * n_oracle as f64).ceil() as usize;
            let q = draws[k_q.clamp(1, n_oracle) - 1];
            let above: Vec<f64> = draws.iter().copied().filter(|v| *v > q).collect();
            let s = if above.is_empty() { q } else { kernels::mean(&above) };
            (mean, q, s)
        })
        .collect();
    Ok(OracleCurves {
        grid: grid.to_vec(),
        theta: grid.iter().map(|&t| structural_theta(t)).collect(),
        mean_y: per_point.iter().map(|p| p.0).collect(),
        alpha,
        q_alpha: per_point.iter().map(|p| p.1).collect(),
        s_alpha: per_point.iter().map(|p| p.2).collect(),
        xi_true: grid.iter().map(|&t| spec.name.xi_true(spec.contamination_p, t)).collect(),
    })
}

/// Evenly spaced grid over `[lo, hi]`.
pub fn linspace(lo: f64, hi: f64, points: usize) -> Vec<f64> {
    match points {
        0 => Vec::new(),
        1 => vec![0.5 * (lo + hi)],
        _ => (0..points)
            .map(|k| lo + (hi - lo) * k as f64 / (points - 1) as f64)
            .collect(),
    }
}
