//! Kernel weights, bandwidths and weighted order statistics.
//!
//! Every quantile in the crate goes through [`weighted_quantile`], which uses
//! the left-continuous step convention on the normalized cumulative weights:
//! the returned value is the first sorted value whose cumulative weight
//! reaches `tau`. With equal weights this is the order statistic
//! `x_(ceil(tau * n))`.

use crate::error::{invalid, Error, Result};

/// Values paired with non-negative weights.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedSample {
    values: Vec<f64>,
    weights: Vec<f64>,
}

impl WeightedSample {
    pub fn new(values: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        if values.len() != weights.len() {
            return Err(invalid(format!(
                "values ({}) and weights ({}) differ in length",
                values.len(),
                weights.len()
            )));
        }
        if let Some(w) = weights.iter().find(|w| !(**w >= 0.0) || !w.is_finite()) {
            return Err(invalid(format!("weight {w} is not a finite non-negative number")));
        }
        if values.iter().any(|v| v.is_nan()) {
            return Err(invalid("NaN value in weighted sample"));
        }
        Ok(Self { values, weights })
    }

    /// Equal unit weights.
    pub fn uniform(values: Vec<f64>) -> Result<Self> {
        let weights = vec![1.0; values.len()];
        Self::new(values, weights)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn total_weight(&self) -> f64 {
        effective_n(&self.weights)
    }

    /// Sub-sample restricted to the given indices.
    pub fn subset(&self, idx: &[usize]) -> Self {
        Self {
            values: idx.iter().map(|&i| self.values[i]).collect(),
            weights: idx.iter().map(|&i| self.weights[i]).collect(),
        }
    }

    pub fn quantile(&self, tau: f64) -> Result<f64> {
        weighted_quantile(self, tau)
    }

    pub fn median(&self) -> Result<f64> {
        weighted_quantile(self, 0.5)
    }

    /// Pairs sorted ascending by value.
    pub fn sorted_pairs(&self) -> Vec<(f64, f64)> {
        let mut pairs: Vec<(f64, f64)> =
            self.values.iter().copied().zip(self.weights.iter().copied()).collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        pairs
    }
}

/// Normal-reference bandwidth `1.06 * sd(t) * n^(-1/5)`, sd with the n-1 denominator.
pub fn silverman_bandwidth(t: &[f64]) -> Result<f64> {
    if t.len() < 2 {
        return Err(Error::Insufficient { needed: 2, got: t.len() });
    }
    let sd = std_dev(t);
    if !(sd > 0.0) || !sd.is_finite() {
        return Err(Error::Degenerate("treatment has zero spread".into()));
    }
    Ok(1.06 * sd * (t.len() as f64).powf(-0.2))
}

/// Gaussian kernel weights `exp(-((t_i - t0)/h)^2 / 2)`.
pub fn gaussian_weights(t: &[f64], t0: f64, h: f64) -> Result<Vec<f64>> {
    if !(h > 0.0) || !h.is_finite() {
        return Err(invalid(format!("bandwidth must be positive, got {h}")));
    }
    Ok(t.iter().map(|&ti| gaussian_kernel((ti - t0) / h)).collect())
}

#[inline]
pub(crate) fn gaussian_kernel(z: f64) -> f64 {
    (-0.5 * z * z).exp()
}

/// First value (ascending) whose normalized cumulative weight reaches `tau`.
pub fn weighted_quantile(ws: &WeightedSample, tau: f64) -> Result<f64> {
    if !(tau > 0.0 && tau < 1.0) && tau != 1.0 {
        return Err(invalid(format!("quantile level must lie in (0, 1], got {tau}")));
    }
    if ws.is_empty() {
        return Err(Error::Insufficient { needed: 1, got: 0 });
    }
    let total = ws.total_weight();
    if !(total > 0.0) {
        return Err(Error::Degenerate("zero total weight".into()));
    }
    Ok(quantile_of_sorted(&ws.sorted_pairs(), total, tau))
}

/// Quantile on pairs already sorted by value; `total` is the sum of their weights.
pub(crate) fn quantile_of_sorted(pairs: &[(f64, f64)], total: f64, tau: f64) -> f64 {
    let target = tau * total;
    let mut cum = 0.0;
    for &(v, w) in pairs {
        cum += w;
        if w > 0.0 && cum >= target {
            return v;
        }
    }
    // rounding left the final cumulative sum a hair below tau * total
    pairs
        .iter()
        .rev()
        .find(|p| p.1 > 0.0)
        .map(|p| p.0)
        .unwrap_or(f64::NAN)
}

/// Sum of the weights.
pub fn effective_n(weights: &[f64]) -> f64 {
    weights.iter().sum()
}

pub(crate) fn mean(x: &[f64]) -> f64 {
    if x.is_empty() {
        return f64::NAN;
    }
    x.iter().sum::<f64>() / x.len() as f64
}

pub(crate) fn std_dev(x: &[f64]) -> f64 {
    let n = x.len();
    if n < 2 {
        return f64::NAN;
    }
    let m = mean(x);
    let ss: f64 = x.iter().map(|v| (v - m) * (v - m)).sum();
    (ss / (n - 1) as f64).sqrt()
}

/// Ordinary median (mean of the two middle values for even length).
pub(crate) fn median(x: &[f64]) -> f64 {
    if x.is_empty() {
        return f64::NAN;
    }
    let mut s = x.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

/// Raw median absolute deviation about the median.
pub(crate) fn mad(x: &[f64]) -> f64 {
    let m = median(x);
    let dev: Vec<f64> = x.iter().map(|v| (v - m).abs()).collect();
    median(&dev)
}

/// Pearson correlation.
pub fn correlation(a: &[f64], b: &[f64]) -> f64 {
    let ma = mean(a);
    let mb = mean(b);
    let mut sab = 0.0;
    let mut saa = 0.0;
    let mut sbb = 0.0;
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    sab / (saa * sbb).sqrt()
}
