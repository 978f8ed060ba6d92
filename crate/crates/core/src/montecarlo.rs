//! Seeded ensembles of coupled paths and the bound checks built on them.
//!
//! Path `i` of an ensemble draws its increments from stream `i` of the
//! master seed, and results are collected in path order before any
//! reduction, so estimates do not depend on how many worker threads ran.

use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::constants::{decay_constants, khasminskii_bound, rho, DecayConstants};
use crate::error::{Error, Result};
use crate::linalg::norm;
use crate::model::HyperplaneDriftModel;
use crate::noise::{fill_increments, steps_in, stream_rng, wiener, TimeGrid};
use crate::paths::{derivative_flow, euler_path, finite_difference_flow, Engine, SeparationMode};
use crate::stats::{least_squares_slope, BoundCheck, LogMean, MCEstimate};

/// Discretisation and sampling parameters shared by every experiment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Numerics {
    pub dt: f64,
    /// Local-time bandwidth; `√dt` when absent.
    #[serde(default)]
    pub eps: Option<f64>,
    pub n_paths: usize,
    pub seed: u64,
    /// `C_allow` in the discretisation allowance `C_allow (√dt + ε)`.
    #[serde(default = "default_allowance_coef")]
    pub allowance_coef: f64,
}

fn default_allowance_coef() -> f64 {
    1.0
}

impl Numerics {
    pub fn new(dt: f64, n_paths: usize, seed: u64) -> Self {
        Self {
            dt,
            eps: None,
            n_paths,
            seed,
            allowance_coef: 1.0,
        }
    }

    pub fn with_eps(mut self, eps: f64) -> Self {
        self.eps = Some(eps);
        self
    }

    pub fn with_allowance_coef(mut self, c: f64) -> Self {
        self.allowance_coef = c;
        self
    }

    pub fn epsilon(&self) -> f64 {
        self.eps.unwrap_or_else(|| self.dt.sqrt())
    }

    pub fn allowance(&self) -> f64 {
        self.allowance_coef * (self.dt.sqrt() + self.epsilon())
    }

    pub fn check(&self) -> Result<()> {
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(Error::domain(format!(
                "dt must be positive, got {}",
                self.dt
            )));
        }
        let eps = self.epsilon();
        if !(eps > 0.0) || !eps.is_finite() {
            return Err(Error::domain(format!("eps must be positive, got {eps}")));
        }
        if self.n_paths < 2 {
            return Err(Error::domain(format!(
                "n_paths must be at least 2, got {}",
                self.n_paths
            )));
        }
        if !(self.allowance_coef >= 0.0) {
            return Err(Error::domain("allowance coefficient must be non-negative"));
        }
        Ok(())
    }
}

/// Increments of one path, drawn step by step.
pub(crate) struct PathNoise {
    rng: ChaCha8Rng,
    dt: f64,
    buf: Vec<f64>,
}

impl PathNoise {
    pub fn new(seed: u64, stream_id: u64, m: usize, dt: f64) -> Self {
        Self {
            rng: stream_rng(seed, stream_id, false),
            dt,
            buf: vec![0.0; m],
        }
    }

    pub fn next_row(&mut self) -> &[f64] {
        fill_increments(&mut self.rng, self.dt, &mut self.buf);
        &self.buf
    }
}

/// Runs `f` for path indices `0..n`, collecting results in index order.
pub(crate) fn run_paths<R, F>(n: usize, f: F) -> Result<Vec<R>>
where
    R: Send,
    F: Fn(u64) -> Result<R> + Sync + Send,
{
    (0..n as u64).into_par_iter().map(f).collect()
}

/// Grid indices of `times`; each must be a non-negative multiple of `dt`.
pub fn grid_steps(times: &[f64], dt: f64) -> Result<Vec<usize>> {
    times
        .iter()
        .map(|&t| {
            if !(t >= 0.0) {
                return Err(Error::domain(format!(
                    "times must be non-negative, got {t}"
                )));
            }
            steps_in(t, dt)
        })
        .collect()
}

/// Steps `eng` through `n_steps` increments, calling `observe(eng, n)` at
/// every step index `n` listed in `record` (including 0).
fn march(
    eng: &mut Engine<'_>,
    noise: &mut PathNoise,
    record: &[usize],
    mut observe: impl FnMut(&Engine<'_>, usize),
) -> Result<()> {
    let last = record.iter().copied().max().unwrap_or(0);
    for n in 0..=last {
        for (i, &r) in record.iter().enumerate() {
            if r == n {
                observe(eng, i);
            }
        }
        if n < last {
            eng.step(noise.next_row())?;
        }
    }
    Ok(())
}

fn transpose(rows: Vec<Vec<f64>>, width: usize) -> Vec<Vec<f64>> {
    let mut cols = vec![Vec::with_capacity(rows.len()); width];
    for r in rows {
        for (c, v) in cols.iter_mut().zip(r) {
            c.push(v);
        }
    }
    cols
}

/// `(E|φ_t(y) − φ_t(x)|^p)^{1/p}` at one time, kept on log scale as well
/// because it routinely falls below the smallest double.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DecayPoint {
    pub t: f64,
    pub estimate: MCEstimate,
    pub ln_estimate: f64,
    /// Delta-method standard error divided by the estimate.
    pub relative_se: f64,
}

pub fn decay_curve(
    model: &HyperplaneDriftModel,
    x: &[f64],
    y: &[f64],
    p: f64,
    times: &[f64],
    numerics: &Numerics,
) -> Result<Vec<DecayPoint>> {
    numerics.check()?;
    model.check_point(x)?;
    model.check_point(y)?;
    if !(p >= 1.0) || !p.is_finite() {
        return Err(Error::domain(format!(
            "moment order must be at least 1, got {p}"
        )));
    }
    let record = grid_steps(times, numerics.dt)?;
    let v: Vec<f64> = y.iter().zip(x).map(|(a, b)| a - b).collect();
    let (m, dt, eps) = (model.noise_dim(), numerics.dt, numerics.epsilon());
    let logs = run_paths(numerics.n_paths, |path| {
        let mut eng =
            Engine::new(model, x, dt, eps)?.with_separation(&v, 1.0, SeparationMode::Hybrid);
        let mut noise = PathNoise::new(numerics.seed, path, m, dt);
        let mut out = vec![0.0; record.len()];
        march(&mut eng, &mut noise, &record, |e, i| {
            out[i] = e.ln_separation()
        })?;
        Ok(out)
    })?;
    transpose(logs, times.len())
        .into_iter()
        .zip(times)
        .map(|(col, &t)| {
            let powered: Vec<f64> = col.iter().map(|l| p * l).collect();
            let lm = LogMean::new(&powered)?;
            let ln_estimate = lm.ln_mean() / p;
            let relative_se = lm.relative_se() / p;
            let mean = ln_estimate.exp();
            Ok(DecayPoint {
                t,
                estimate: MCEstimate {
                    mean,
                    std_error: relative_se * mean,
                    n: numerics.n_paths,
                    seed: numerics.seed,
                },
                ln_estimate,
                relative_se,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecayVerification {
    pub constants: DecayConstants,
    pub points: Vec<DecayPoint>,
    /// `E|φ_t(y) − φ_t(x)| e^{C2 t} / |x − y|` against `C1`.
    pub checks: Vec<BoundCheck>,
    /// Minus the least-squares slope of `ln` estimates over the positive times.
    pub fitted_rate: Option<f64>,
    pub rate_tolerance: f64,
    pub rate_pass: bool,
    pub pass: bool,
}

/// Checks `E|φ_t(y) − φ_t(x)| ≤ C1 e^{−C2 t} |x − y|` at each time, with the
/// constants computed for the model's own `λ`.
///
/// Comparisons are made after multiplying by `e^{C2 t}/|x − y|`, and the
/// allowance is applied in those units.
pub fn verify_decay(
    model: &HyperplaneDriftModel,
    x: &[f64],
    y: &[f64],
    times: &[f64],
    numerics: &Numerics,
    rate_tolerance: f64,
) -> Result<DecayVerification> {
    let constants = decay_constants(model.dim(), model.lambda(), model.declared())?;
    let points = decay_curve(model, x, y, 1.0, times, numerics)?;
    let gap: Vec<f64> = y.iter().zip(x).map(|(a, b)| a - b).collect();
    let ln_gap = norm(&gap).ln();
    let checks: Vec<BoundCheck> = points
        .iter()
        .map(|pt| {
            let normalized = if pt.ln_estimate == f64::NEG_INFINITY {
                0.0
            } else {
                (pt.ln_estimate + constants.c2 * pt.t - ln_gap).exp()
            };
            let est = MCEstimate {
                mean: normalized,
                std_error: pt.relative_se * normalized,
                n: pt.estimate.n,
                seed: pt.estimate.seed,
            };
            BoundCheck::new(
                "decay_normalized",
                pt.t,
                est,
                constants.c1,
                numerics.allowance(),
            )
        })
        .collect();
    let fit: Vec<&DecayPoint> = points
        .iter()
        .filter(|p| p.t > 0.0 && p.ln_estimate.is_finite())
        .collect();
    let fitted_rate = if fit.len() >= 2 {
        let ts: Vec<f64> = fit.iter().map(|p| p.t).collect();
        let ls: Vec<f64> = fit.iter().map(|p| p.ln_estimate).collect();
        Some(-least_squares_slope(&ts, &ls)?)
    } else {
        None
    };
    let rate_pass = fitted_rate.map_or(true, |r| r >= constants.c2 - rate_tolerance);
    let pass = rate_pass && checks.iter().all(|c| c.pass);
    Ok(DecayVerification {
        constants,
        points,
        checks,
        fitted_rate,
        rate_tolerance,
        rate_pass,
        pass,
    })
}

/// Start points used for the supremum over `x`: `x`, its projection on `S`
/// and the origin, without repeats.
pub fn default_start_grid(x: &[f64]) -> Vec<Vec<f64>> {
    let mut proj = x.to_vec();
    if let Some(last) = proj.last_mut() {
        *last = 0.0;
    }
    let mut grid = vec![x.to_vec()];
    for p in [proj, vec![0.0; x.len()]] {
        if !grid.contains(&p) {
            grid.push(p);
        }
    }
    grid
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LocalTimeReport {
    pub start_points: Vec<Vec<f64>>,
    /// `Ê L_t` per start point and time.
    pub start_means: Vec<Vec<MCEstimate>>,
    pub checks: Vec<BoundCheck>,
}

/// `Ê L_t ≤ ρ(t, λ)/B_σ` (order 1) and
/// `Ê L_t^n ≤ n! (max_z Ê_z L_t)^n` (orders 2, 3), started from `x` with the
/// maximum taken over `start_grid` (which should contain `x`).
pub fn local_time_moments(
    model: &HyperplaneDriftModel,
    x: &[f64],
    times: &[f64],
    orders: &[u32],
    numerics: &Numerics,
    start_grid: Option<&[Vec<f64>]>,
) -> Result<LocalTimeReport> {
    numerics.check()?;
    model.check_point(x)?;
    if orders.is_empty() || orders.iter().any(|n| !(1..=3).contains(n)) {
        return Err(Error::domain(
            "orders must be a nonempty subset of {1, 2, 3}",
        ));
    }
    let b = model.declared().b_sigma;
    if !(b > 0.0) {
        return Err(Error::domain("B_sigma must be positive"));
    }
    let record = grid_steps(times, numerics.dt)?;
    let starts: Vec<Vec<f64>> = match start_grid {
        Some(g) => g.to_vec(),
        None => default_start_grid(x),
    };
    let samples = |z: &[f64]| -> Result<Vec<Vec<f64>>> {
        model.check_point(z)?;
        let (m, dt, eps) = (model.noise_dim(), numerics.dt, numerics.epsilon());
        let rows = run_paths(numerics.n_paths, |path| {
            let mut eng = Engine::new(model, z, dt, eps)?;
            let mut noise = PathNoise::new(numerics.seed, path, m, dt);
            let mut out = vec![0.0; record.len()];
            march(&mut eng, &mut noise, &record, |e, i| out[i] = e.local_time)?;
            Ok(out)
        })?;
        Ok(transpose(rows, times.len()))
    };

    let from_x = samples(x)?;
    let mut start_means = Vec::with_capacity(starts.len());
    for z in &starts {
        let cols = if z.as_slice() == x {
            from_x.clone()
        } else {
            samples(z)?
        };
        start_means.push(
            cols.iter()
                .map(|c| MCEstimate::from_samples(c, numerics.seed))
                .collect::<Result<Vec<_>>>()?,
        );
    }
    let allowance = numerics.allowance();
    let mut checks = Vec::new();
    for (i, &t) in times.iter().enumerate() {
        let sup_mean = start_means
            .iter()
            .map(|s| s[i].mean)
            .fold(f64::NEG_INFINITY, f64::max);
        for &n in orders {
            let powered: Vec<f64> = from_x[i].iter().map(|l| l.powi(n as i32)).collect();
            let est = MCEstimate::from_samples(&powered, numerics.seed)?;
            let check = if n == 1 {
                let bound = rho(t, model.lambda(), model.declared())? / b;
                BoundCheck::new("local_time_mean", t, est, bound, allowance)
            } else {
                let factorial = (1..=n).product::<u32>() as f64;
                let bound = factorial * sup_mean.max(0.0).powi(n as i32);
                BoundCheck::new(format!("local_time_moment_{n}"), t, est, bound, allowance)
            };
            checks.push(check);
        }
    }
    Ok(LocalTimeReport {
        start_points: starts,
        start_means,
        checks,
    })
}

/// `Ê exp(2‖D‖∞ L_t)` against the chained Khasminskii bound, at the last grid
/// time not after `t`. The block length defaults to the `t₀` of
/// [`decay_constants`].
pub fn exp_local_time_moment(
    model: &HyperplaneDriftModel,
    x: &[f64],
    t: f64,
    numerics: &Numerics,
    t0: Option<f64>,
) -> Result<BoundCheck> {
    numerics.check()?;
    model.check_point(x)?;
    let c = model.declared();
    let t0 = match t0 {
        Some(v) => v,
        None => decay_constants(model.dim(), model.lambda(), c)?.t0,
    };
    if !(t >= 0.0) {
        return Err(Error::domain(format!("t must be non-negative, got {t}")));
    }
    let n = (t / numerics.dt * (1.0 + 1e-12)).floor() as usize;
    let grid = TimeGrid::from_steps(0.0, numerics.dt, n);
    let bound = khasminskii_bound(grid.t_end, model.lambda(), c, t0)?;
    let two_d = 2.0 * c.norm_d_inf;
    let (m, dt, eps) = (model.noise_dim(), numerics.dt, numerics.epsilon());
    let values = run_paths(numerics.n_paths, |path| {
        let mut eng = Engine::new(model, x, dt, eps)?;
        let mut noise = PathNoise::new(numerics.seed, path, m, dt);
        for _ in 0..n {
            eng.step(noise.next_row())?;
        }
        Ok((two_d * eng.local_time).exp())
    })?;
    let est = MCEstimate::from_samples(&values, numerics.seed)?;
    Ok(BoundCheck::new(
        "exp_local_time",
        grid.t_end,
        est,
        bound,
        numerics.allowance(),
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WeightedFlowReport {
    /// The record time with the largest estimate, checked against `d`.
    pub check: BoundCheck,
    pub curve: Vec<(f64, MCEstimate)>,
}

/// `sup_{s ≤ t} Ê e^{h(s)} |Y_s|²` with
/// `h(s) = (2λ − 2K_α − K_σ²) s − 2‖D‖∞ L_s`, over `n_records` equally spaced
/// grid times in `(0, t]` together with `s = 0`.
pub fn weighted_flow_moment(
    model: &HyperplaneDriftModel,
    x: &[f64],
    t: f64,
    n_records: usize,
    numerics: &Numerics,
) -> Result<WeightedFlowReport> {
    numerics.check()?;
    model.check_point(x)?;
    if !model.has_jacobians() {
        return Err(Error::MissingJacobians(model.name().to_string()));
    }
    let n_steps = steps_in(t, numerics.dt)?;
    let n_records = n_records.max(1).min(n_steps.max(1));
    let mut record: Vec<usize> = (0..=n_records)
        .map(|i| ((i as f64 / n_records as f64) * n_steps as f64).round() as usize)
        .collect();
    record.dedup();
    let c = model.declared();
    let rate = 2.0 * model.lambda() - 2.0 * c.k_alpha - c.k_sigma * c.k_sigma;
    let two_d = 2.0 * c.norm_d_inf;
    let (m, dt, eps) = (model.noise_dim(), numerics.dt, numerics.epsilon());
    let rows = run_paths(numerics.n_paths, |path| {
        let mut eng = Engine::new(model, x, dt, eps)?.with_flow();
        let mut noise = PathNoise::new(numerics.seed, path, m, dt);
        let mut out = vec![0.0; record.len()];
        march(&mut eng, &mut noise, &record, |e, i| {
            let s = record[i] as f64 * dt;
            let h = rate * s - two_d * e.local_time;
            let ln_y = e.flow.as_ref().expect("flow is tracked").ln_norm();
            out[i] = h + 2.0 * ln_y;
        })?;
        Ok(out)
    })?;
    let curve: Vec<(f64, MCEstimate)> = transpose(rows, record.len())
        .iter()
        .zip(&record)
        .map(|(col, &n)| {
            Ok((
                n as f64 * dt,
                MCEstimate::from_log_samples(col, 0.0, numerics.seed)?,
            ))
        })
        .collect::<Result<_>>()?;
    let (t_sup, sup) =
        curve
            .iter()
            .copied()
            .fold((0.0, None::<MCEstimate>), |acc, (s, e)| match acc.1 {
                Some(best) if best.mean >= e.mean => acc,
                _ => (s, Some(e)),
            });
    let sup = sup.expect("at least one record time");
    Ok(WeightedFlowReport {
        check: BoundCheck::new(
            "weighted_flow_sup",
            t_sup,
            sup,
            model.dim() as f64,
            numerics.allowance(),
        ),
        curve,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GateauxReport {
    pub t: f64,
    pub eps: Vec<f64>,
    /// `Ê |(φ_t(x + εv) − φ_t(x))/ε − Y_t v|` per `ε`.
    pub l1_error: Vec<MCEstimate>,
    /// Errors strictly decrease along `eps` as listed.
    pub monotone: bool,
}

/// Compares finite-difference quotients with the derivative flow on shared
/// noise.
pub fn gateaux_consistency(
    model: &HyperplaneDriftModel,
    x: &[f64],
    v: &[f64],
    t: f64,
    eps_list: &[f64],
    numerics: &Numerics,
) -> Result<GateauxReport> {
    numerics.check()?;
    let grid = TimeGrid::new(0.0, t, numerics.dt)?;
    let d = model.dim();
    let bandwidth = numerics.epsilon();
    let rows = run_paths(numerics.n_paths, |path| {
        let w = wiener(model.noise_dim(), grid, numerics.seed, path)?;
        let traj = euler_path(model, x, &w, bandwidth)?;
        let flow = derivative_flow(model, &traj, &w)?;
        let y = flow.final_matrix();
        let yv: Vec<f64> = (0..d)
            .map(|i| (0..d).map(|j| y[i * d + j] * v[j]).sum())
            .collect();
        let quotients = finite_difference_flow(model, x, v, eps_list, &w)?;
        Ok(quotients
            .iter()
            .map(|q| {
                let diff: Vec<f64> = q.iter().zip(&yv).map(|(a, b)| a - b).collect();
                norm(&diff)
            })
            .collect::<Vec<f64>>())
    })?;
    let l1_error = transpose(rows, eps_list.len())
        .iter()
        .map(|c| MCEstimate::from_samples(c, numerics.seed))
        .collect::<Result<Vec<_>>>()?;
    let monotone = l1_error.windows(2).all(|p| p[1].mean < p[0].mean);
    Ok(GateauxReport {
        t: grid.t_end,
        eps: eps_list.to_vec(),
        l1_error,
        monotone,
    })
}
