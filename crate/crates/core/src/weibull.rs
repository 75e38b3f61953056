//! Weibull survival statistics of a batch of crushing strengths.
//!
//! Strengths are sorted ascending and given the mean-rank survival
//! probability `P_s(i) = 1 - i/(N+1)`. A least-squares line of
//! `ln(-ln P_s)` on `ln sigma` gives the modulus `m` (slope) and the
//! characteristic strength `sigma0 = exp(-intercept/m)`, the strength at
//! `P_s = 1/e`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::simulator::CrushRecord;

/// Valid tests a particle type needs before it is fitted.
pub const MIN_VALID: usize = 30;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum WeibullError {
    #[error("{valid} valid tests, at least {required} required")]
    InsufficientData { valid: usize, required: usize },
    #[error("all strengths are equal")]
    DegenerateSample,
    #[error("strengths must be finite and positive")]
    NonPositive,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeibullFit {
    pub m: f64,
    /// MPa.
    pub sigma0: f64,
    pub r2: f64,
    pub n_valid: usize,
}

impl WeibullFit {
    /// Fitted survival probability `exp(-(sigma/sigma0)^m)`.
    pub fn survival(&self, sigma: f64) -> f64 {
        (-(sigma / self.sigma0).powf(self.m)).exp()
    }
}

/// Strengths of the valid records, in input order.
pub fn filter_batch(records: &[CrushRecord], min_valid: usize) -> Result<Vec<f64>, WeibullError> {
    let strengths: Vec<f64> = records.iter().filter(|r| r.valid).map(|r| r.strength).collect();
    if strengths.is_empty() || strengths.len() < min_valid {
        return Err(WeibullError::InsufficientData {
            valid: strengths.len(),
            required: min_valid.max(1),
        });
    }
    Ok(strengths)
}

/// Mean-rank survival probabilities of `n` sorted samples.
pub fn mean_rank_survival(n: usize) -> Vec<f64> {
    (1..=n).map(|i| 1.0 - i as f64 / (n as f64 + 1.0)).collect()
}

/// Least-squares fit of the linearised survival curve. Needs at least
/// three strengths; the per-type minimum is enforced by [`filter_batch`].
pub fn fit(strengths: &[f64]) -> Result<WeibullFit, WeibullError> {
    if strengths.len() < 3 {
        return Err(WeibullError::InsufficientData {
            valid: strengths.len(),
            required: 3,
        });
    }
    if strengths.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
        return Err(WeibullError::NonPositive);
    }
    let mut sorted = strengths.to_vec();
    sorted.sort_by(f64::total_cmp);
    if sorted[0] == sorted[sorted.len() - 1] {
        return Err(WeibullError::DegenerateSample);
    }
    let x: Vec<f64> = sorted.iter().map(|s| s.ln()).collect();
    let y: Vec<f64> = mean_rank_survival(sorted.len())
        .iter()
        .map(|p| (-p.ln()).ln())
        .collect();
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(&y) {
        sxx += (a - mx) * (a - mx);
        sxy += (a - mx) * (b - my);
        syy += (b - my) * (b - my);
    }
    if sxx <= 0.0 {
        return Err(WeibullError::DegenerateSample);
    }
    let m = sxy / sxx;
    let intercept = my - m * mx;
    let r2 = (sxy * sxy / (sxx * syy)).clamp(0.0, 1.0);
    Ok(WeibullFit {
        m,
        sigma0: (-intercept / m).exp(),
        r2,
        n_valid: sorted.len(),
    })
}

/// Five-number summary with linear interpolation between order statistics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quantiles {
    pub min: f64,
    pub q25: f64,
    pub median: f64,
    pub q75: f64,
    pub max: f64,
}

impl Quantiles {
    /// Panics on an empty slice.
    pub fn of(values: &[f64]) -> Self {
        assert!(!values.is_empty(), "quantiles of an empty sample");
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let q = |p: f64| {
            let h = p * (v.len() - 1) as f64;
            let lo = h.floor() as usize;
            let hi = (lo + 1).min(v.len() - 1);
            v[lo] + (h - lo as f64) * (v[hi] - v[lo])
        };
        Self {
            min: v[0],
            q25: q(0.25),
            median: q(0.5),
            q75: q(0.75),
            max: v[v.len() - 1],
        }
    }

    pub fn as_array(&self) -> [f64; 5] {
        [self.min, self.q25, self.median, self.q75, self.max]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub sigma0: Quantiles,
    pub m: Quantiles,
    pub n_types: usize,
}

/// `None` for an empty list.
pub fn dataset_summary(fits: &[WeibullFit]) -> Option<DatasetSummary> {
    if fits.is_empty() {
        return None;
    }
    let s: Vec<f64> = fits.iter().map(|f| f.sigma0).collect();
    let m: Vec<f64> = fits.iter().map(|f| f.m).collect();
    Some(DatasetSummary {
        sigma0: Quantiles::of(&s),
        m: Quantiles::of(&m),
        n_types: fits.len(),
    })
}
