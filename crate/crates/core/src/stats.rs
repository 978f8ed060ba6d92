//! Monte Carlo estimates, bound checks and Kolmogorov–Smirnov tests.

use serde::Serialize;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::linalg::pairwise_sum;

/// Standard errors added to the mean before comparing with a bound.
pub const Z_SCORE: f64 = 3.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MCEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub n: usize,
    pub seed: u64,
}

impl MCEstimate {
    /// Sample mean and `sd/√n` of `values`.
    pub fn from_samples(values: &[f64], seed: u64) -> Result<Self> {
        let n = values.len();
        if n < 2 {
            return Err(Error::domain(format!("need at least 2 samples, got {n}")));
        }
        let mean = pairwise_sum(values) / n as f64;
        let sq: Vec<f64> = values.iter().map(|v| (v - mean) * (v - mean)).collect();
        let var = pairwise_sum(&sq) / (n - 1) as f64;
        Ok(Self {
            mean,
            std_error: (var / n as f64).sqrt(),
            n,
            seed,
        })
    }

    /// Estimate of `E exp(l + shift)` from samples `l` given on log scale.
    /// Entries of `−∞` stand for exact zeros.
    pub fn from_log_samples(logs: &[f64], shift: f64, seed: u64) -> Result<Self> {
        let lm = LogMean::new(logs)?;
        let scale = (lm.max + shift).exp();
        Ok(Self {
            mean: lm.scaled_mean * scale,
            std_error: lm.scaled_se * scale,
            n: logs.len(),
            seed,
        })
    }

    /// Upper end of the one-sided `z`-interval.
    pub fn upper(&self) -> f64 {
        self.mean + Z_SCORE * self.std_error
    }
}

/// Mean of `exp(l_i)` kept on log scale.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogMean {
    pub max: f64,
    /// Mean and standard error of `exp(l_i − max)`.
    pub scaled_mean: f64,
    pub scaled_se: f64,
    pub n: usize,
}

impl LogMean {
    pub fn new(logs: &[f64]) -> Result<Self> {
        let n = logs.len();
        if n < 2 {
            return Err(Error::domain(format!("need at least 2 samples, got {n}")));
        }
        if logs.iter().any(|v| v.is_nan() || *v == f64::INFINITY) {
            return Err(Error::InvalidState("non-finite log sample".into()));
        }
        let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if max == f64::NEG_INFINITY {
            return Ok(Self {
                max: 0.0,
                scaled_mean: 0.0,
                scaled_se: 0.0,
                n,
            });
        }
        let vals: Vec<f64> = logs.iter().map(|l| (l - max).exp()).collect();
        let est = MCEstimate::from_samples(&vals, 0)?;
        Ok(Self {
            max,
            scaled_mean: est.mean,
            scaled_se: est.std_error,
            n,
        })
    }

    /// `ln` of the sample mean.
    pub fn ln_mean(&self) -> f64 {
        if self.scaled_mean == 0.0 {
            f64::NEG_INFINITY
        } else {
            self.max + self.scaled_mean.ln()
        }
    }

    pub fn relative_se(&self) -> f64 {
        if self.scaled_mean == 0.0 {
            0.0
        } else {
            self.scaled_se / self.scaled_mean
        }
    }
}

/// Outcome of comparing an estimate with an upper bound:
/// `slack = bound − (mean + 3·se)`, passing when `slack ≥ −allowance`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundCheck {
    pub quantity: String,
    pub t: f64,
    pub estimate: MCEstimate,
    pub bound: f64,
    pub z: f64,
    pub allowance: f64,
    pub slack: f64,
    pub pass: bool,
}

impl BoundCheck {
    pub fn new(
        quantity: impl Into<String>,
        t: f64,
        estimate: MCEstimate,
        bound: f64,
        allowance: f64,
    ) -> Self {
        let slack = bound - (estimate.mean + Z_SCORE * estimate.std_error);
        Self {
            quantity: quantity.into(),
            t,
            estimate,
            bound,
            z: Z_SCORE,
            allowance,
            slack,
            pass: slack >= -allowance,
        }
    }
}

pub fn all_pass(checks: &[BoundCheck]) -> bool {
    checks.iter().all(|c| c.pass)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KsResult {
    pub statistic: f64,
    pub p_value: f64,
    pub n1: usize,
    pub n2: usize,
}

/// `Q(λ) = 2 Σ_{k≥1} (−1)^{k−1} e^{−2k²λ²}`, the Kolmogorov tail.
pub fn kolmogorov_q(lambda: f64) -> f64 {
    if lambda < 1e-3 {
        return 1.0;
    }
    if lambda < 1.18 {
        // The alternating series converges slowly here; use the dual form
        // 1 − (√(2π)/λ) Σ_{k≥1} e^{−(2k−1)²π²/(8λ²)}.
        let c = std::f64::consts::PI * std::f64::consts::PI / (8.0 * lambda * lambda);
        let s: f64 = (1..=20)
            .map(|k| (-((2 * k - 1) as f64).powi(2) * c).exp())
            .sum();
        return (1.0 - (2.0 * std::f64::consts::PI).sqrt() / lambda * s).clamp(0.0, 1.0);
    }
    let mut sum = 0.0;
    for k in 1..=100 {
        let term = (-2.0 * (k * k) as f64 * lambda * lambda).exp();
        sum += if k % 2 == 1 { term } else { -term };
        if term < 1e-18 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

fn p_value(d: f64, n_eff: f64) -> f64 {
    let sq = n_eff.sqrt();
    kolmogorov_q((sq + 0.12 + 0.11 / sq) * d)
}

fn sorted(values: &[f64]) -> Result<Vec<f64>> {
    if values.iter().any(|v| v.is_nan()) {
        return Err(Error::InvalidState("NaN sample".into()));
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    Ok(v)
}

/// Two-sample Kolmogorov–Smirnov test.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> Result<KsResult> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::domain("KS test needs nonempty samples"));
    }
    let (a, b) = (sorted(a)?, sorted(b)?);
    let (n1, n2) = (a.len(), b.len());
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < n1 && j < n2 {
        let x = a[i].min(b[j]);
        while i < n1 && a[i] <= x {
            i += 1;
        }
        while j < n2 && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / n1 as f64 - j as f64 / n2 as f64).abs());
    }
    let n_eff = (n1 * n2) as f64 / (n1 + n2) as f64;
    Ok(KsResult {
        statistic: d,
        p_value: p_value(d, n_eff),
        n1,
        n2,
    })
}

/// One-sample Kolmogorov–Smirnov test against `N(mean, sd²)`.
pub fn ks_normal(a: &[f64], mean: f64, sd: f64) -> Result<KsResult> {
    if a.is_empty() {
        return Err(Error::domain("KS test needs a nonempty sample"));
    }
    let dist = Normal::new(mean, sd).map_err(|e| Error::domain(e.to_string()))?;
    let a = sorted(a)?;
    let n = a.len() as f64;
    let mut d: f64 = 0.0;
    for (i, x) in a.iter().enumerate() {
        let f = dist.cdf(*x);
        d = d.max((i as f64 + 1.0) / n - f).max(f - i as f64 / n);
    }
    Ok(KsResult {
        statistic: d,
        p_value: p_value(d, n),
        n1: a.len(),
        n2: 0,
    })
}

/// Least-squares slope of `ys` against `xs`.
pub fn least_squares_slope(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return Err(Error::domain("slope needs at least two paired points"));
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    if sxx == 0.0 {
        return Err(Error::domain("slope needs distinct abscissae"));
    }
    Ok(sxy / sxx)
}
