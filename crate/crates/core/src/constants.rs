//! Explicit constants of the exponential decay estimate.
//!
//! Everything here is a pure function of [`ModelConstants`] and `λ`:
//! the local-time growth function `ρ(t, λ)`, the threshold `Λ` above which
//! decay is certified, the block length `t₀` of the Khasminskii chaining,
//! the prefactor `C1` and rate `C2` of `E|φ_t(y) − φ_t(x)| ≤ C1 e^{−C2 t}|y − x|`,
//! and the dissipativity pair of the generator acting on `|x|²`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{frobenius, norm};
use crate::model::{HyperplaneDriftModel, ModelConstants};

/// Relative shrink applied to the bisection root so the defining
/// inequality of `δ` holds strictly.
pub const DELTA_SHRINK: f64 = 1e-9;
/// Relative tolerance of the `δ` bisection.
pub const DELTA_RTOL: f64 = 1e-10;
/// Number of log-spaced points in the coarse `t₀` search.
pub const T0_GRID_POINTS: usize = 10_000;
/// The grid spans `[cap·10^{-T0_GRID_DECADES}, cap]`.
pub const T0_GRID_DECADES: f64 = 8.0;
/// `t₀` is kept this far (relatively) below its open upper limit `1/λ`.
pub const T0_CAP_MARGIN: f64 = 1e-9;

fn check_time_rate(t: f64, lambda: f64) -> Result<()> {
    if !(t >= 0.0) || !t.is_finite() {
        return Err(Error::domain(format!("time must be non-negative, got {t}")));
    }
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(Error::domain(format!(
            "lambda must be positive, got {lambda}"
        )));
    }
    Ok(())
}

/// Upper bound on `E L_t` times `B_σ`:
/// `ρ(t,λ) = ‖α^d‖ t + (1 + 2λt/3) √((‖α^d‖²/(2λ) + ‖σ‖²) t)`.
pub fn rho(t: f64, lambda: f64, c: &ModelConstants) -> Result<f64> {
    check_time_rate(t, lambda)?;
    let a = c.norm_alpha_d_inf;
    let s = c.norm_sigma_inf;
    let spread = a * a / (2.0 * lambda) + s * s;
    Ok(a * t + (1.0 + 2.0 * lambda * t / 3.0) * (spread * t).sqrt())
}

/// The simplified majorant of [`rho`], valid for `λ ≥ 1/2`:
/// `(1 + 2λt/3) √((‖α^d‖² + ‖σ‖²) t) + ‖α^d‖ t`.
pub fn rho_upper(t: f64, lambda: f64, c: &ModelConstants) -> Result<f64> {
    check_time_rate(t, lambda)?;
    if lambda < 0.5 {
        return Err(Error::domain(format!(
            "the simplified bound needs lambda >= 1/2, got {lambda}"
        )));
    }
    let a = c.norm_alpha_d_inf;
    let s = c.norm_sigma_inf;
    Ok((1.0 + 2.0 * lambda * t / 3.0) * ((a * a + s * s) * t).sqrt() + a * t)
}

/// `K = K_α + K_σ²/2` and the coefficients of
/// `(2‖D‖/B_σ) ρ_upper(t) = K1 t^{1/2} + K2 t + K3 λ t^{3/2}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ProofConstants {
    #[serde(rename = "K")]
    pub k: f64,
    #[serde(rename = "K1")]
    pub k1: f64,
    #[serde(rename = "K2")]
    pub k2: f64,
    #[serde(rename = "K3")]
    pub k3: f64,
}

pub fn proof_constants(c: &ModelConstants) -> Result<ProofConstants> {
    let k = c.k_alpha + 0.5 * c.k_sigma * c.k_sigma;
    if c.norm_d_inf == 0.0 {
        return Ok(ProofConstants {
            k,
            k1: 0.0,
            k2: 0.0,
            k3: 0.0,
        });
    }
    if !(c.b_sigma > 0.0) {
        return Err(Error::domain("B_sigma must be positive"));
    }
    let a = c.norm_alpha_d_inf;
    let root = (a * a + c.norm_sigma_inf * c.norm_sigma_inf).sqrt();
    let ratio = c.norm_d_inf / c.b_sigma;
    Ok(ProofConstants {
        k,
        k1: 2.0 * ratio * root,
        k2: 2.0 * ratio * a,
        k3: 4.0 * ratio * root / 3.0,
    })
}

/// `Λ` together with the `δ` it was derived from (`δ = ∞` when `‖D‖∞ = 0`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Threshold {
    #[serde(rename = "Lambda")]
    pub lambda_threshold: f64,
    pub delta: f64,
}

/// `Λ = max{1/2, 4K/3, 1/δ}` where `δ` is (just below) the root of
/// `1 − K2 δ − (K1 + K3) √δ = e^{−1/2}`.
pub fn lambda_threshold(c: &ModelConstants) -> Result<Threshold> {
    let p = proof_constants(c)?;
    let base = 0.5f64.max(4.0 * p.k / 3.0);
    if c.norm_d_inf == 0.0 {
        return Ok(Threshold {
            lambda_threshold: base,
            delta: f64::INFINITY,
        });
    }
    let target = (-0.5f64).exp();
    let g = |delta: f64| 1.0 - p.k2 * delta - (p.k1 + p.k3) * delta.sqrt() - target;
    let mut lo = 0.0;
    let mut hi = 1.0;
    while g(hi) > 0.0 {
        lo = hi;
        hi *= 2.0;
    }
    while hi - lo > DELTA_RTOL * hi {
        let mid = 0.5 * (lo + hi);
        if g(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let delta = lo * (1.0 - DELTA_SHRINK);
    Ok(Threshold {
        lambda_threshold: base.max(1.0 / delta),
        delta,
    })
}

/// `q(t₀) = 2‖D‖∞ ρ(t₀, λ) / B_σ`, the Khasminskii contraction parameter.
pub fn khasminskii_ratio(t0: f64, lambda: f64, c: &ModelConstants) -> Result<f64> {
    if c.norm_d_inf == 0.0 {
        check_time_rate(t0, lambda)?;
        return Ok(0.0);
    }
    if !(c.b_sigma > 0.0) {
        return Err(Error::domain("B_sigma must be positive"));
    }
    Ok(2.0 * c.norm_d_inf * rho(t0, lambda, c)? / c.b_sigma)
}

/// Bound on `sup_x E exp(2‖D‖∞ L_t)`: `(1 − q)^{−1}` for `t ≤ t₀`, and
/// `(1 − q)^{−(⌊t/t₀⌋ + 1)}` after chaining over blocks of length `t₀`.
pub fn khasminskii_bound(t: f64, lambda: f64, c: &ModelConstants, t0: f64) -> Result<f64> {
    check_time_rate(t, lambda)?;
    if !(t0 > 0.0) {
        return Err(Error::domain(format!("t0 must be positive, got {t0}")));
    }
    let q = khasminskii_ratio(t0, lambda, c)?;
    if q >= 1.0 {
        return Err(Error::domain(format!(
            "infeasible block length: 2|D| rho(t0, lambda) / B_sigma = {q} >= 1"
        )));
    }
    let blocks = if t <= t0 {
        1.0
    } else {
        // Exact multiples of t0 must not lose a block to rounding.
        (t / t0 * (1.0 + 1e-12)).floor() + 1.0
    };
    Ok((-blocks * (-q).ln_1p()).exp())
}

/// Every constant of the decay certificate at a fixed `λ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DecayConstants {
    pub lambda: f64,
    #[serde(rename = "K")]
    pub k: f64,
    #[serde(rename = "K1")]
    pub k1: f64,
    #[serde(rename = "K2")]
    pub k2: f64,
    #[serde(rename = "K3")]
    pub k3: f64,
    pub delta: f64,
    #[serde(rename = "Lambda")]
    pub lambda_threshold: f64,
    pub t0: f64,
    pub rho_at_t0: f64,
    #[serde(rename = "C1")]
    pub c1: f64,
    /// Certified exponential rate.
    #[serde(rename = "C2")]
    pub c2: f64,
    /// Log-contraction over one block of length `2t₀`:
    /// `2t₀(λ − K) + ln(1 − K1 t₀^{1/2} − K2 t₀ − K3 λ t₀^{3/2}) = 2t₀ · C2`.
    #[serde(rename = "C2_block")]
    pub c2_block: f64,
}

/// Picks `t₀ ∈ (0, 1/λ)` maximising the certified rate and returns the
/// resulting constants.
///
/// The rate is `λ − K + ln(1 − (2‖D‖/B_σ) ρ_upper(t₀, λ)) / (2t₀)`; the
/// prefactor is `C1 = √d (1 − 2‖D‖ ρ(t₀, λ)/B_σ)^{−1/2}`.
pub fn decay_constants(dim: usize, lambda: f64, c: &ModelConstants) -> Result<DecayConstants> {
    if dim == 0 {
        return Err(Error::domain("dimension must be positive"));
    }
    let threshold = lambda_threshold(c)?;
    if !(lambda > threshold.lambda_threshold) {
        return Err(Error::ThresholdNotMet {
            lambda,
            threshold: threshold.lambda_threshold,
        });
    }
    let p = proof_constants(c)?;
    let cap = (1.0 - T0_CAP_MARGIN) / lambda;

    let log_arg = |t: f64| -> f64 {
        let arg = 1.0 - p.k1 * t.sqrt() - p.k2 * t - p.k3 * lambda * t * t.sqrt();
        if arg > 0.0 {
            arg.ln()
        } else {
            f64::NEG_INFINITY
        }
    };
    let rate = |t: f64| -> f64 {
        match khasminskii_ratio(t, lambda, c) {
            Ok(q) if q < 1.0 => lambda - p.k + log_arg(t) / (2.0 * t),
            _ => f64::NEG_INFINITY,
        }
    };

    let t0 = if c.norm_d_inf == 0.0 {
        cap
    } else {
        let grid: Vec<f64> = (0..T0_GRID_POINTS)
            .map(|i| {
                let e = -T0_GRID_DECADES * (1.0 - i as f64 / (T0_GRID_POINTS - 1) as f64);
                cap * 10f64.powf(e)
            })
            .collect();
        let mut best = 0;
        let mut best_rate = f64::NEG_INFINITY;
        for (i, &t) in grid.iter().enumerate() {
            let r = rate(t);
            if r >= best_rate {
                best = i;
                best_rate = r;
            }
        }
        let lo = grid[best.saturating_sub(1)];
        let hi = grid[(best + 1).min(grid.len() - 1)];
        let refined = golden_section_max(&rate, lo, hi, 200);
        if rate(refined) >= best_rate {
            refined
        } else {
            grid[best]
        }
    };

    let c2 = rate(t0);
    if !(c2 > 0.0) || !c2.is_finite() {
        return Err(Error::domain(format!(
            "no feasible t0 gives a positive rate at lambda = {lambda}"
        )));
    }
    let q = khasminskii_ratio(t0, lambda, c)?;
    let c1 = (dim as f64).sqrt() / (1.0 - q).sqrt();
    Ok(DecayConstants {
        lambda,
        k: p.k,
        k1: p.k1,
        k2: p.k2,
        k3: p.k3,
        delta: threshold.delta,
        lambda_threshold: threshold.lambda_threshold,
        t0,
        rho_at_t0: rho(t0, lambda, c)?,
        c1,
        c2,
        c2_block: 2.0 * t0 * c2,
    })
}

fn golden_section_max(f: &impl Fn(f64) -> f64, mut a: f64, mut b: f64, iters: usize) -> f64 {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = b - inv_phi * (b - a);
    let mut x2 = a + inv_phi * (b - a);
    let (mut f1, mut f2) = (f(x1), f(x2));
    for _ in 0..iters {
        if b - a <= 1e-15 * b.abs() {
            break;
        }
        if f1 < f2 {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + inv_phi * (b - a);
            f2 = f(x2);
        } else {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - inv_phi * (b - a);
            f1 = f(x1);
        }
    }
    if f1 >= f2 {
        x1
    } else {
        x2
    }
}

/// `A|x|² ≤ K1_gen − K2_gen |x|²` for the generator `A` of the solution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GeneratorBound {
    #[serde(rename = "K1_gen")]
    pub k1_gen: f64,
    #[serde(rename = "K2_gen")]
    pub k2_gen: f64,
}

impl GeneratorBound {
    /// `K1_gen / K2_gen`, the long-run cap on `E|φ|²`.
    pub fn second_moment_cap(&self) -> f64 {
        self.k1_gen / self.k2_gen
    }

    /// Comparison bound `|x|² e^{−K2 τ} + (K1/K2)(1 − e^{−K2 τ})` on `E|φ_{s,s+τ}(x)|²`.
    pub fn second_moment_bound(&self, x_norm_sq: f64, elapsed: f64) -> f64 {
        let decay = (-self.k2_gen * elapsed).exp();
        x_norm_sq * decay + self.second_moment_cap() * (1.0 - decay)
    }
}

/// `K1_gen = ‖α‖∞²/λ + ‖σ‖∞²`, `K2_gen = λ`.
pub fn generator_bound(c: &ModelConstants, lambda: f64) -> Result<GeneratorBound> {
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(Error::domain(format!(
            "lambda must be positive, got {lambda}"
        )));
    }
    Ok(GeneratorBound {
        k1_gen: c.norm_alpha_inf * c.norm_alpha_inf / lambda + c.norm_sigma_inf * c.norm_sigma_inf,
        k2_gen: lambda,
    })
}

/// `A|x|² = −2λ|x|² + 2(α(x), x) + |σ(x)|²`.
pub fn generator_of_square_norm(model: &HyperplaneDriftModel, x: &[f64]) -> Result<f64> {
    model.check_point(x)?;
    let (d, m) = (model.dim(), model.noise_dim());
    let mut a = vec![0.0; d];
    let mut s = vec![0.0; d * m];
    model.alpha_into(x, &mut a);
    model.sigma_into(x, &mut s);
    let r2 = x.iter().map(|v| v * v).sum::<f64>();
    let ax: f64 = a.iter().zip(x).map(|(p, q)| p * q).sum();
    let hs = frobenius(&s);
    Ok(-2.0 * model.lambda() * r2 + 2.0 * ax + hs * hs)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GeneratorCheck {
    pub n_points: usize,
    /// Largest `A|x|² − (K1_gen − K2_gen|x|²)` seen; non-positive on success.
    pub max_excess: f64,
    pub pass: bool,
}

/// Evaluates the dissipativity inequality at points drawn uniformly from the
/// ball of the given radius.
pub fn generator_check(
    model: &HyperplaneDriftModel,
    n_points: usize,
    radius: f64,
    seed: u64,
) -> Result<GeneratorCheck> {
    let bound = generator_bound(model.declared(), model.lambda())?;
    let d = model.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = vec![0.0; d];
    let mut max_excess = f64::NEG_INFINITY;
    for _ in 0..n_points {
        loop {
            for v in x.iter_mut() {
                *v = rng.random_range(-radius..=radius);
            }
            if norm(&x) <= radius {
                break;
            }
        }
        let r2 = x.iter().map(|v| v * v).sum::<f64>();
        let excess = generator_of_square_norm(model, &x)? - (bound.k1_gen - bound.k2_gen * r2);
        max_excess = max_excess.max(excess);
    }
    Ok(GeneratorCheck {
        n_points,
        max_excess,
        pass: max_excess <= 1e-12 * bound.k1_gen.max(1.0),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn bang_bang_constants() -> ModelConstants {
        *HyperplaneDriftModel::bang_bang(2, 1.0, 0.5)
            .unwrap()
            .declared()
    }

    fn ou_constants(d: usize) -> ModelConstants {
        *HyperplaneDriftModel::ornstein_uhlenbeck(d, 1.0)
            .unwrap()
            .declared()
    }

    #[test]
    fn rho_values() {
        let c = bang_bang_constants();
        assert_eq!(rho(0.0, 3.0, &c).unwrap(), 0.0);
        // 0.5 + (5/3) sqrt(0.125 + 2)
        assert_relative_eq!(
            rho(1.0, 1.0, &c).unwrap(),
            2.929_563_289_518_875_5,
            epsilon = 1e-12
        );
        let mut no_drift = ou_constants(1);
        no_drift.norm_sigma_inf = 1.0;
        assert_relative_eq!(
            rho(1.0, 1.0, &no_drift).unwrap(),
            5.0 / 3.0,
            epsilon = 1e-12
        );
        assert!(rho(-1.0, 1.0, &c).is_err());
    }

    #[test]
    fn rho_upper_values() {
        let c = bang_bang_constants();
        assert_eq!(rho_upper(0.0, 1.0, &c).unwrap(), 0.0);
        assert_relative_eq!(rho_upper(1.0, 1.0, &c).unwrap(), 3.0, epsilon = 1e-12);
        assert!(rho_upper(1.0, 1.0, &c).unwrap() >= rho(1.0, 1.0, &c).unwrap());
        assert!(rho_upper(1.0, 0.4, &c).is_err());
    }

    #[test]
    fn threshold_of_ou_is_one_half() {
        let t = lambda_threshold(&ou_constants(2)).unwrap();
        assert_eq!(t.lambda_threshold, 0.5);
        assert_eq!(t.delta, f64::INFINITY);
    }

    #[test]
    fn threshold_driven_by_drift_gradient() {
        let mut c = ou_constants(2);
        c.k_alpha = 3.0;
        assert_relative_eq!(lambda_threshold(&c).unwrap().lambda_threshold, 4.0);
    }

    #[test]
    fn threshold_of_bang_bang_matches_quadratic_root() {
        // Root in u = sqrt(delta) of K2 u^2 + (K1 + K3) u = 1 - e^{-1/2},
        // with K1 = 3, K2 = 1, K3 = 2, solved in closed form offline.
        let delta_star = 0.006_005_140_252_350_959;
        let t = lambda_threshold(&bang_bang_constants()).unwrap();
        assert_relative_eq!(t.delta, delta_star, max_relative = 1e-8);
        assert!(t.delta < delta_star);
        assert_relative_eq!(
            t.lambda_threshold,
            166.524_004_265_930_16,
            max_relative = 1e-8
        );
        let p = proof_constants(&bang_bang_constants()).unwrap();
        assert_relative_eq!(p.k1, 3.0, epsilon = 1e-12);
        assert_relative_eq!(p.k2, 1.0, epsilon = 1e-12);
        assert_relative_eq!(p.k3, 2.0, epsilon = 1e-12);
        // The defining inequality holds strictly at the returned delta.
        let lhs = -0.5 - (1.0 - p.k2 * t.delta - (p.k1 + p.k3) * t.delta.sqrt()).ln();
        assert!(lhs < 0.0);
    }

    #[test]
    fn ou_decay_constants() {
        let k = decay_constants(2, 1.0, &ou_constants(2)).unwrap();
        assert_relative_eq!(k.c1, 2f64.sqrt(), epsilon = 1e-15);
        assert_relative_eq!(k.c2, 1.0, epsilon = 1e-15);
        assert_relative_eq!(k.t0, 1.0, max_relative = 1e-8);
        assert!(k.t0 < 1.0);
        assert_relative_eq!(k.c2_block, 2.0, max_relative = 1e-8);
        assert_eq!(k.lambda_threshold, 0.5);
    }

    #[test]
    fn bang_bang_decay_constants_are_positive_just_above_threshold() {
        let c = bang_bang_constants();
        let big_lambda = lambda_threshold(&c).unwrap().lambda_threshold;
        let k = decay_constants(2, big_lambda * 1.01, &c).unwrap();
        assert!(k.c2 > 0.0 && k.c2_block > 0.0);
        assert!(k.t0 > 0.0 && k.t0 < 1.0 / k.lambda && k.t0 < k.delta);
        assert!(2.0 * c.norm_d_inf * k.rho_at_t0 / c.b_sigma < 1.0);
        assert!(k.c1 >= 2f64.sqrt());
    }

    #[test]
    fn below_threshold_is_an_error_carrying_lambda() {
        let c = bang_bang_constants();
        match decay_constants(2, 0.1, &c) {
            Err(Error::ThresholdNotMet { lambda, threshold }) => {
                assert_eq!(lambda, 0.1);
                assert_relative_eq!(threshold, 166.524, epsilon = 1e-3);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn t0_is_a_maximiser_on_the_feasible_interval() {
        // Brute-force the rate on a fine linear grid and compare.
        let c = bang_bang_constants();
        let lambda = 400.0;
        let k = decay_constants(2, lambda, &c).unwrap();
        let p = proof_constants(&c).unwrap();
        let mut best = f64::NEG_INFINITY;
        for i in 1..200_000 {
            let t = i as f64 / 200_000.0 / lambda;
            let arg = 1.0 - p.k1 * t.sqrt() - p.k2 * t - p.k3 * lambda * t.powf(1.5);
            if arg > 0.0 && 2.0 * rho(t, lambda, &c).unwrap() < 1.0 {
                best = best.max(lambda - p.k + arg.ln() / (2.0 * t));
            }
        }
        assert!(k.c2 >= best - 1e-6, "{} < {}", k.c2, best);
    }

    #[test]
    fn khasminskii_examples() {
        let ou = ou_constants(2);
        for t in [0.0, 0.3, 5.0, 100.0] {
            assert_eq!(khasminskii_bound(t, 1.0, &ou, 0.2).unwrap(), 1.0);
        }
        // Choose t0 with q = 1/2 exactly: 2 * rho(t0) = 1/2 for the scalar
        // driftless model, rho(t0, 1) = (1 + 2 t0 / 3) sqrt(t0).
        let mut c = ou_constants(1);
        c.norm_d_inf = 1.0;
        let t0 = {
            let f = |t: f64| (1.0 + 2.0 * t / 3.0) * t.sqrt() - 0.25;
            let (mut lo, mut hi) = (0.0, 1.0);
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if f(mid) > 0.0 {
                    hi = mid
                } else {
                    lo = mid
                }
            }
            0.5 * (lo + hi)
        };
        assert_relative_eq!(
            khasminskii_ratio(t0, 1.0, &c).unwrap(),
            0.5,
            epsilon = 1e-12
        );
        assert_relative_eq!(
            khasminskii_bound(t0 / 2.0, 1.0, &c, t0).unwrap(),
            2.0,
            epsilon = 1e-10
        );
        assert_relative_eq!(
            khasminskii_bound(2.5 * t0, 1.0, &c, t0).unwrap(),
            8.0,
            epsilon = 1e-9
        );
    }

    #[test]
    fn khasminskii_rejects_infeasible_block() {
        let c = bang_bang_constants();
        assert!(matches!(
            khasminskii_bound(1.0, 1.0, &c, 1.0),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn generator_bound_values() {
        let g = generator_bound(&ou_constants(2), 1.0).unwrap();
        assert_relative_eq!(g.k1_gen, 2.0, epsilon = 1e-14);
        assert_eq!(g.k2_gen, 1.0);
        let g = generator_bound(&bang_bang_constants(), 1.0).unwrap();
        assert_relative_eq!(g.k1_gen, 2.25, epsilon = 1e-14);
    }

    #[test]
    fn generator_inequality_on_sampled_points() {
        let bb = HyperplaneDriftModel::bang_bang(2, 1.0, 0.5).unwrap();
        let check = generator_check(&bb, 1000, 10.0, 7).unwrap();
        assert!(check.pass, "{check:?}");
        let smooth = HyperplaneDriftModel::smooth_lipschitz(3, 0.7).unwrap();
        assert!(generator_check(&smooth, 1000, 10.0, 8).unwrap().pass);
        // OU: A|x|^2 = -2|x|^2 + 2 <= 2 - |x|^2.
        let ou = HyperplaneDriftModel::ornstein_uhlenbeck(2, 1.0).unwrap();
        let x = [1.5, -0.5];
        assert_relative_eq!(generator_of_square_norm(&ou, &x).unwrap(), -2.0 * 2.5 + 2.0);
    }

    proptest! {
        #[test]
        fn rho_is_increasing_and_dominated(t in 1e-6f64..10.0, dt in 1e-6f64..1.0, lambda in 0.5f64..50.0,
                                           a in 0.0f64..3.0, s in 0.1f64..3.0) {
            let mut c = bang_bang_constants();
            c.norm_alpha_d_inf = a;
            c.norm_sigma_inf = s;
            let r = rho(t, lambda, &c).unwrap();
            prop_assert!(rho(t + dt, lambda, &c).unwrap() > r);
            prop_assert!(rho_upper(t, lambda, &c).unwrap() >= r * (1.0 - 1e-15));
        }

        #[test]
        fn khasminskii_is_nondecreasing(t in 0.0f64..1.0, dt in 0.0f64..1.0, t0 in 1e-5f64..1e-2) {
            let c = bang_bang_constants();
            let lambda = 200.0;
            let a = khasminskii_bound(t, lambda, &c, t0).unwrap();
            let b = khasminskii_bound(t + dt, lambda, &c, t0).unwrap();
            prop_assert!(b >= a);
        }

        #[test]
        fn threshold_is_monotone(dd in 0.0f64..1.0, da in 0.0f64..1.0, ds in 0.0f64..1.0, dk in 0.0f64..5.0) {
            let c = bang_bang_constants();
            let base = lambda_threshold(&c).unwrap().lambda_threshold;
            let mut bigger = c;
            bigger.norm_d_inf += dd;
            bigger.norm_alpha_d_inf += da;
            bigger.norm_sigma_inf += ds;
            bigger.k_alpha += dk;
            prop_assert!(lambda_threshold(&bigger).unwrap().lambda_threshold >= base * (1.0 - 1e-9));
        }

        #[test]
        fn rate_positive_above_threshold(log_factor in 0.0f64..(10f64).ln(), which in 0usize..2) {
            let c = if which == 0 {
                bang_bang_constants()
            } else {
                *HyperplaneDriftModel::smooth_lipschitz(2, 1.0).unwrap().declared()
            };
            let big_lambda = lambda_threshold(&c).unwrap().lambda_threshold;
            let lambda = big_lambda * log_factor.exp() * (1.0 + 1e-6);
            let k = decay_constants(2, lambda, &c).unwrap();
            prop_assert!(k.c2 > 0.0);
            prop_assert!(k.t0 < 1.0 / lambda);
        }
    }

    #[test]
    fn continuous_case_rate_is_lambda_minus_k() {
        let mut c = ou_constants(2);
        c.k_alpha = 0.25;
        let k = decay_constants(2, 3.0, &c).unwrap();
        assert_relative_eq!(k.c2, 3.0 - 0.25, epsilon = 1e-12);
        assert_relative_eq!(k.c2_block, 2.0 * (3.0 - 0.25) / 3.0, max_relative = 1e-8);
    }
}
