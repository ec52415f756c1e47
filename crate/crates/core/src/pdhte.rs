//! Per-treatment tail shape on the pilot-median-centred outcome: kernel-weighted
//! Hill plateau detection, DEdH moment estimation, shrinkage-damped half-sample
//! jackknife, refusal, and stabilized GPS weights.

use rand::seq::index::sample as sample_indices;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dgp::Sample;
use crate::dml::NuisanceFit;
use crate::error::{invalid, Error, Result};
use crate::kernels::{self, quantile_of_sorted, WeightedSample};
use crate::rng::{mix_seed, rng_for, stream};

/// Smallest effective (summed-weight) size of a top-kappa set.
pub const MIN_TOP_WEIGHT: f64 = 5.0;
/// Observations with kernel weight below this are outside the half-sample band.
pub const BAND_WEIGHT_FLOOR: f64 = 1e-6;
pub const CV_MEDIAN_FLOOR: f64 = 0.05;
pub const MIN_DEFINED_KAPPAS: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PdhteConfig {
    pub kappa_grid: Vec<f64>,
    pub cv_threshold: f64,
    pub lambda: f64,
    pub n_jk: usize,
    pub global_accept_floor: f64,
    /// Top fraction anchoring the companion scale.
    pub sigma_kappa: f64,
    pub seed: u64,
}

impl Default for PdhteConfig {
    fn default() -> Self {
        Self {
            kappa_grid: vec![0.04, 0.06, 0.08, 0.10, 0.12, 0.15, 0.20],
            cv_threshold: 0.25,
            lambda: 0.5,
            n_jk: 4,
            global_accept_floor: 0.70,
            sigma_kappa: 0.10,
            seed: 0,
        }
    }
}

impl PdhteConfig {
    pub fn with_seed(seed: u64) -> Self {
        Self { seed, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.kappa_grid.is_empty() || self.kappa_grid.iter().any(|k| !(*k > 0.0 && *k < 0.5)) {
            return Err(invalid("kappa values must lie in (0, 0.5)"));
        }
        if !(self.sigma_kappa > 0.0 && self.sigma_kappa < 0.5) {
            return Err(invalid("sigma kappa must lie in (0, 0.5)"));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(invalid("lambda must lie in [0, 1]"));
        }
        if !(self.cv_threshold > 0.0) {
            return Err(invalid("cv threshold must be positive"));
        }
        if !(0.0..=1.0).contains(&self.global_accept_floor) {
            return Err(invalid("global accept floor must lie in [0, 1]"));
        }
        Ok(())
    }
}

/// `|Y_i - median_w(Y)|` with weights `kernel(T_i; t0, h) * extra_i`.
pub fn pilot_centered_deviations(
    y: &[f64],
    t: &[f64],
    t0: f64,
    h: f64,
    extra_weights: Option<&[f64]>,
) -> Result<WeightedSample> {
    if y.len() != t.len() {
        return Err(invalid("outcome and treatment lengths differ"));
    }
    let mut w = kernels::gaussian_weights(t, t0, h)?;
    if let Some(extra) = extra_weights {
        if extra.len() != w.len() {
            return Err(invalid("extra weights have the wrong length"));
        }
        for (wi, e) in w.iter_mut().zip(extra) {
            *wi *= e;
        }
    }
    let ws = WeightedSample::new(y.to_vec(), w)?;
    if !(ws.total_weight() > 0.0) {
        return Err(Error::Degenerate("zero total weight".into()));
    }
    let pilot = ws.median()?;
    let dev: Vec<f64> = y.iter().map(|v| (v - pilot).abs()).collect();
    WeightedSample::new(dev, ws.weights().to_vec())
}

/// Weighted log-moments of the top-kappa set about its anchor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TopMoments {
    /// Weighted (1 - kappa)-quantile; the log-spacing anchor.
    pub anchor: f64,
    pub m1: f64,
    pub m2: f64,
    pub top_weight: f64,
}

/// Ascending value/weight pairs with their total weight.
#[derive(Debug, Clone)]
pub struct SortedSample {
    pairs: Vec<(f64, f64)>,
    total: f64,
}

impl SortedSample {
    pub fn new(ws: &WeightedSample) -> Self {
        Self { pairs: ws.sorted_pairs(), total: ws.total_weight() }
    }

    fn from_pairs(pairs: Vec<(f64, f64)>) -> Self {
        let total = pairs.iter().map(|p| p.1).sum();
        Self { pairs, total }
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Top set = observations after the weighted (1 - kappa)-quantile position.
    pub fn top_moments(&self, kappa: f64) -> Option<TopMoments> {
        if !(self.total > 0.0) || self.pairs.is_empty() {
            return None;
        }
        let target = (1.0 - kappa) * self.total;
        let mut cum = 0.0;
        let mut anchor_idx = None;
        for (i, &(_, w)) in self.pairs.iter().enumerate() {
            cum += w;
            if w > 0.0 && cum >= target {
                anchor_idx = Some(i);
                break;
            }
        }
        let a = anchor_idx?;
        let anchor = self.pairs[a].0;
        if !(anchor > 0.0) {
            return None;
        }
        let la = anchor.ln();
        let (mut sw, mut s1, mut s2) = (0.0, 0.0, 0.0);
        for &(v, w) in &self.pairs[a + 1..] {
            if w > 0.0 {
                let d = v.ln() - la;
                sw += w;
                s1 += w * d;
                s2 += w * d * d;
            }
        }
        if sw < MIN_TOP_WEIGHT {
            return None;
        }
        Some(TopMoments { anchor, m1: s1 / sw, m2: s2 / sw, top_weight: sw })
    }

    pub fn hill(&self, kappa: f64) -> Option<f64> {
        self.top_moments(kappa).map(|m| m.m1)
    }

    pub fn dedh(&self, kappa: f64) -> Option<f64> {
        self.top_moments(kappa).and_then(|m| dedh_from_moments(m.m1, m.m2))
    }

    pub fn quantile(&self, tau: f64) -> f64 {
        quantile_of_sorted(&self.pairs, self.total, tau)
    }
}

/// `M1 + 1 - 0.5 / (1 - M1^2 / M2)`; `None` for degenerate moments.
pub fn dedh_from_moments(m1: f64, m2: f64) -> Option<f64> {
    if !(m2 > 0.0) {
        return None;
    }
    let ratio = 1.0 - m1 * m1 / m2;
    if ratio == 0.0 || !ratio.is_finite() {
        return None;
    }
    let xi = m1 + 1.0 - 0.5 / ratio;
    xi.is_finite().then_some(xi)
}

/// Kernel-weighted Hill estimate; `None` when the top set is too light.
pub fn kw_hill(dev: &WeightedSample, kappa: f64) -> Option<f64> {
    SortedSample::new(dev).hill(kappa)
}

/// Kernel-weighted DEdH moment estimate; `None` when undefined.
pub fn kw_dedh(dev: &WeightedSample, kappa: f64) -> Option<f64> {
    SortedSample::new(dev).dedh(kappa)
}

/// MAD over kappa of the Hill values divided by `max(|median|, 0.05)`.
pub fn cv_of_values(values: &[f64]) -> f64 {
    if values.len() < MIN_DEFINED_KAPPAS {
        return f64::INFINITY;
    }
    kernels::mad(values) / kernels::median(values).abs().max(CV_MEDIAN_FLOOR)
}

pub fn plateau_cv(dev: &WeightedSample, cfg: &PdhteConfig) -> f64 {
    sorted_plateau_cv(&SortedSample::new(dev), cfg)
}

fn sorted_plateau_cv(s: &SortedSample, cfg: &PdhteConfig) -> f64 {
    let hills: Vec<f64> = cfg.kappa_grid.iter().filter_map(|&k| s.hill(k)).collect();
    cv_of_values(&hills)
}

fn median_dedh(s: &SortedSample, kappas: &[f64]) -> Option<f64> {
    let vals: Vec<f64> = kappas.iter().filter_map(|&k| s.dedh(k)).collect();
    (!vals.is_empty()).then(|| kernels::median(&vals))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PointEstimate {
    Accepted {
        xi: f64,
        sigma: f64,
        cv: f64,
        xi_full: f64,
        xi_half: f64,
        /// Weighted (1 - sigma_kappa)-quantile of the deviations.
        anchor: f64,
    },
    Refused {
        cv: f64,
    },
}

impl PointEstimate {
    pub fn cv(&self) -> f64 {
        match *self {
            PointEstimate::Accepted { cv, .. } | PointEstimate::Refused { cv } => cv,
        }
    }

    pub fn xi(&self) -> Option<f64> {
        match *self {
            PointEstimate::Accepted { xi, .. } => Some(xi),
            PointEstimate::Refused { .. } => None,
        }
    }
}

/// `(1 - lambda) xi_full + lambda (2 xi_full - xi_half)`.
pub fn shrinkage_jackknife(xi_full: f64, xi_half: f64, lambda: f64) -> f64 {
    xi_full + lambda * (xi_full - xi_half)
}

/// Plateau gate, full-sample DEdH median over kappa, jackknife on `n_jk` half-samples.
pub fn pdhte_point(dev: &WeightedSample, cfg: &PdhteConfig, seed: u64) -> PointEstimate {
    sorted_point(&SortedSample::new(dev), cfg, seed)
}

fn sorted_point(s: &SortedSample, cfg: &PdhteConfig, seed: u64) -> PointEstimate {
    let cv = sorted_plateau_cv(s, cfg);
    if !(cv < cfg.cv_threshold) {
        return PointEstimate::Refused { cv };
    }
    let Some(xi_full) = median_dedh(s, &cfg.kappa_grid) else {
        return PointEstimate::Refused { cv };
    };

    // half-samples keep the ascending order of the parent sample
    let band: Vec<usize> = (0..s.len()).filter(|&i| s.pairs[i].1 > BAND_WEIGHT_FLOOR).collect();
    let half = band.len() / 2;
    let mut halves = Vec::with_capacity(cfg.n_jk);
    if half > 0 {
        for rep in 0..cfg.n_jk {
            let mut rng = rng_for(mix_seed(seed, rep as u64), stream::JACKKNIFE);
            let mut pick: Vec<usize> = sample_indices(&mut rng, band.len(), half).into_iter().map(|j| band[j]).collect();
            pick.sort_unstable();
            let sub = SortedSample::from_pairs(pick.iter().map(|&i| s.pairs[i]).collect());
            if let Some(v) = median_dedh(&sub, &cfg.kappa_grid) {
                halves.push(v);
            }
        }
    }
    let xi_half = if halves.is_empty() { xi_full } else { kernels::mean(&halves) };
    let xi = shrinkage_jackknife(xi_full, xi_half, cfg.lambda);

    let Some(m) = s.top_moments(cfg.sigma_kappa) else {
        return PointEstimate::Refused { cv };
    };
    let sigma = m.anchor * m.m1 * (1.0 - xi.min(0.0));
    if !(sigma > 0.0) || !sigma.is_finite() {
        return PointEstimate::Refused { cv };
    }
    PointEstimate::Accepted { xi, sigma, cv, xi_full, xi_half, anchor: m.anchor }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerTTailCurve {
    pub grid: Vec<f64>,
    pub xi: Vec<Option<f64>>,
    pub sigma: Vec<Option<f64>>,
    pub cv: Vec<f64>,
    pub accepted: Vec<bool>,
    pub globally_refused: bool,
    pub bandwidth: f64,
}

impl PerTTailCurve {
    pub fn accepted_fraction(&self) -> f64 {
        self.accepted.iter().filter(|&&a| a).count() as f64 / self.accepted.len().max(1) as f64
    }
}

/// Per-grid-point estimates with the Silverman bandwidth of `T`.
pub fn pdhte_curve(
    y: &[f64],
    t: &[f64],
    grid: &[f64],
    cfg: &PdhteConfig,
    extra_weights: Option<&[f64]>,
) -> Result<PerTTailCurve> {
    let h = kernels::silverman_bandwidth(t)?;
    pdhte_curve_with_bandwidth(y, t, grid, cfg, extra_weights, h)
}

pub fn pdhte_curve_with_bandwidth(
    y: &[f64],
    t: &[f64],
    grid: &[f64],
    cfg: &PdhteConfig,
    extra_weights: Option<&[f64]>,
    h: f64,
) -> Result<PerTTailCurve> {
    cfg.validate()?;
    if grid.is_empty() {
        return Err(invalid("empty treatment grid"));
    }
    let points: Vec<PointEstimate> = grid
        .par_iter()
        .enumerate()
        .map(|(k, &t0)| {
            let dev = pilot_centered_deviations(y, t, t0, h, extra_weights)?;
            Ok(pdhte_point(&dev, cfg, mix_seed(cfg.seed, k as u64)))
        })
        .collect::<Result<_>>()?;
    let mut curve = PerTTailCurve {
        grid: grid.to_vec(),
        xi: Vec::with_capacity(grid.len()),
        sigma: Vec::with_capacity(grid.len()),
        cv: Vec::with_capacity(grid.len()),
        accepted: Vec::with_capacity(grid.len()),
        globally_refused: false,
        bandwidth: h,
    };
    for p in points {
        curve.cv.push(p.cv());
        match p {
            PointEstimate::Accepted { xi, sigma, .. } => {
                curve.xi.push(Some(xi));
                curve.sigma.push(Some(sigma));
                curve.accepted.push(true);
            }
            PointEstimate::Refused { .. } => {
                curve.xi.push(None);
                curve.sigma.push(None);
                curve.accepted.push(false);
            }
        }
    }
    curve.globally_refused = curve.accepted_fraction() < cfg.global_accept_floor;
    Ok(curve)
}

#[derive(Debug, Clone, PartialEq)]
pub struct StabilizedWeights {
    pub sw: Vec<f64>,
    pub clipped_fraction: f64,
}

pub const DEFAULT_WINSOR_PCT: f64 = 99.0;
pub const DEFAULT_CLIP_MULT: f64 = 10.0;

fn normal_density(z: f64, sd: f64) -> f64 {
    (-0.5 * z * z).exp() / (sd * (2.0 * std::f64::consts::PI).sqrt())
}

/// `f_T(T_i) / f_{T|X}(T_i | X_i)` with Gaussian densities, winsorized at
/// `winsor_pct` and clipped to `clip_mult` times the median.
pub fn gps_weights(sample: &Sample, nuisance: &NuisanceFit, winsor_pct: f64, clip_mult: f64) -> Result<StabilizedWeights> {
    let n = sample.len();
    if nuisance.m_hat.len() != n {
        return Err(invalid("nuisance fit does not match the sample"));
    }
    if !(winsor_pct > 0.0 && winsor_pct <= 100.0) || !(clip_mult > 0.0) {
        return Err(invalid("winsor percentile must lie in (0, 100] and clip multiple be positive"));
    }
    let var_c = sample.t.iter().zip(&nuisance.m_hat).map(|(t, m)| (t - m) * (t - m)).sum::<f64>() / n as f64;
    let mt = kernels::mean(&sample.t);
    let var_m = sample.t.iter().map(|t| (t - mt) * (t - mt)).sum::<f64>() / n as f64;
    if !(var_c > 0.0) || !(var_m > 0.0) {
        return Err(Error::Degenerate("treatment residual variance is zero".into()));
    }
    let (sd_c, sd_m) = (var_c.sqrt(), var_m.sqrt());
    let raw: Vec<f64> = sample
        .t
        .iter()
        .zip(&nuisance.m_hat)
        .map(|(&t, &m)| normal_density((t - mt) / sd_m, sd_m) / normal_density((t - m) / sd_c, sd_c))
        .collect();
    if raw.iter().any(|w| !w.is_finite() || !(*w > 0.0)) {
        return Err(Error::Degenerate("non-finite stabilized weight".into()));
    }
    let cap = WeightedSample::uniform(raw.clone())?.quantile(winsor_pct / 100.0)?;
    let mut sw: Vec<f64> = raw.iter().map(|w| w.min(cap)).collect();
    let clip = clip_mult * kernels::median(&sw);
    for w in sw.iter_mut() {
        *w = w.min(clip);
    }
    let changed = raw.iter().zip(&sw).filter(|(a, b)| a != b).count();
    Ok(StabilizedWeights { sw, clipped_fraction: changed as f64 / n as f64 })
}
