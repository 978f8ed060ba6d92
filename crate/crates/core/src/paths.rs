//! Euler–Maruyama paths, local time estimators and the derivative flow.
//!
//! The scheme is explicit with left-point coefficients:
//! `x_{n+1} = x_n + (−λx_n + α(x_n)) dt + σ(x_n) Δw_n`, and the local time of
//! the last coordinate at 0 is estimated by occupation,
//! `ΔL_n = dt/(2ε) · 1{|x_n^d| ≤ ε}`.
//!
//! Differences of two coupled paths and the derivative flow are carried as
//! `base · 2^e · u` with `u` renormalised every step, so contraction rates of
//! several hundred over unit time do not underflow.

use std::f64::consts::LN_2;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{gemm_acc, gemv_acc, identity, norm};
use crate::model::{jump_column, HyperplaneDriftModel, Side};
use crate::noise::{IncrementsView, TimeGrid, WienerIncrements, GRID_TOL};

/// A coupled difference switches to the linearised update once
/// `|Δ| < LINEARIZE_REL · (1 + |x|²)^{1/2}`.
pub const LINEARIZE_REL: f64 = 1e-7;

const RENORM_LOW: f64 = 1.0 / 18_446_744_073_709_551_616.0; // 2^-64
const RENORM_HIGH: f64 = 18_446_744_073_709_551_616.0; // 2^64

impl<'a> From<&'a WienerIncrements> for IncrementsView<'a> {
    fn from(w: &'a WienerIncrements) -> Self {
        w.view()
    }
}

#[inline]
pub fn occupation_increment(x_d: f64, dt: f64, eps: f64) -> f64 {
    if x_d.abs() <= eps {
        dt / (2.0 * eps)
    } else {
        0.0
    }
}

/// `2^k` for `|k| ≤ 1000`, built from the exponent bits.
#[inline]
fn pow2(k: i64) -> f64 {
    debug_assert!(k.abs() <= 1000);
    f64::from_bits(((k + 1023) as u64) << 52)
}

/// Multiplies by `2^k` without overflowing the intermediate power.
pub(crate) fn mul_pow2(v: &mut [f64], mut k: i64) {
    while k != 0 {
        let step = k.clamp(-1000, 1000);
        let f = pow2(step);
        for x in v.iter_mut() {
            *x *= f;
        }
        k -= step;
    }
}

/// A vector or matrix stored as `base · 2^e2 · u`.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Scaled {
    pub u: Vec<f64>,
    pub e2: i64,
    pub base: f64,
}

impl Scaled {
    pub fn new(u: Vec<f64>, base: f64) -> Self {
        let mut s = Self { u, e2: 0, base };
        s.renorm();
        s
    }

    /// `ln` of the Euclidean (Hilbert–Schmidt) norm; `−∞` for zero.
    pub fn ln_norm(&self) -> f64 {
        let n = norm(&self.u);
        if n == 0.0 || self.base == 0.0 {
            return f64::NEG_INFINITY;
        }
        self.base.ln() + self.e2 as f64 * LN_2 + n.ln()
    }

    /// `2^e2 · u`, the value divided by `base`.
    pub fn relative(&self) -> Vec<f64> {
        let mut v = self.u.clone();
        mul_pow2(&mut v, self.e2);
        v
    }

    pub fn write_value(&self, out: &mut [f64]) {
        out.copy_from_slice(&self.u);
        mul_pow2(out, self.e2);
        for x in out.iter_mut() {
            *x *= self.base;
        }
    }

    /// `|value|² < r2`, without square roots or logarithms.
    pub fn norm_sq_below(&self, r2: f64) -> bool {
        if self.e2 < -500 {
            return true;
        }
        if self.e2 > 500 {
            return false;
        }
        let scale = self.base * pow2(self.e2);
        let n2: f64 = self.u.iter().map(|v| v * v).sum();
        n2 * scale * scale < r2
    }

    pub fn renorm(&mut self) {
        let n = self.u.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        if n == 0.0 || !n.is_finite() || (RENORM_LOW..=RENORM_HIGH).contains(&n) {
            return;
        }
        let k = n.log2().round() as i64;
        mul_pow2(&mut self.u, -k);
        self.e2 += k;
    }

    /// Adds an increment given in absolute units.
    fn add_absolute(&mut self, inc: &mut [f64]) {
        if inc.iter().all(|v| *v == 0.0) {
            return;
        }
        mul_pow2(inc, -self.e2);
        for (u, c) in self.u.iter_mut().zip(inc.iter()) {
            *u += c / self.base;
        }
    }
}

/// How a coupled difference is propagated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SeparationMode {
    /// Always the difference of the two Euler recursions.
    Exact,
    /// Exact while `|Δ|` is resolvable, the derivative-flow recursion below
    /// [`LINEARIZE_REL`].
    Hybrid,
}

#[derive(Debug, Clone)]
pub(crate) struct Separation {
    pub delta: Scaled,
    pub mode: SeparationMode,
}

struct Scratch {
    a: Vec<f64>,
    a2: Vec<f64>,
    s: Vec<f64>,
    s2: Vec<f64>,
    y: Vec<f64>,
    ja: Vec<f64>,
    js: Vec<f64>,
    col: Vec<f64>,
    tmp: Vec<f64>,
    proj: Vec<f64>,
    inc: Vec<f64>,
    acc: Vec<f64>,
    ja_zero: bool,
    js_zero: Vec<bool>,
}

impl Scratch {
    fn new(d: usize, m: usize) -> Self {
        Self {
            a: vec![0.0; d],
            a2: vec![0.0; d],
            s: vec![0.0; d * m],
            s2: vec![0.0; d * m],
            y: vec![0.0; d],
            ja: vec![0.0; d * d],
            js: vec![0.0; m * d * d],
            col: vec![0.0; d],
            tmp: vec![0.0; d],
            proj: vec![0.0; d],
            inc: vec![0.0; d],
            acc: vec![0.0; d * d],
            ja_zero: false,
            js_zero: vec![false; m],
        }
    }

    /// Evaluates both Jacobians at `x` and notes which blocks vanish.
    fn load_jacobians(&mut self, model: &HyperplaneDriftModel, x: &[f64]) {
        let c = model.coefficients();
        c.alpha_jacobian(Side::of(x), x, &mut self.ja);
        c.sigma_jacobian(x, &mut self.js);
        self.ja_zero = self.ja.iter().all(|v| *v == 0.0);
        let dd = x.len() * x.len();
        for (k, z) in self.js_zero.iter_mut().enumerate() {
            *z = self.js[k * dd..(k + 1) * dd].iter().all(|v| *v == 0.0);
        }
    }
}

/// One path of the scheme, optionally carrying a coupled difference and the
/// derivative flow.
pub(crate) struct Engine<'m> {
    model: &'m HyperplaneDriftModel,
    d: usize,
    m: usize,
    dt: f64,
    eps: f64,
    sc: Scratch,
    pub x: Vec<f64>,
    pub local_time: f64,
    pub last_dl: f64,
    pub steps: usize,
    pub sep: Option<Separation>,
    pub flow: Option<Scaled>,
}

impl<'m> Engine<'m> {
    pub fn new(model: &'m HyperplaneDriftModel, x0: &[f64], dt: f64, eps: f64) -> Result<Self> {
        model.check_point(x0)?;
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(Error::domain(format!("dt must be positive, got {dt}")));
        }
        if !(eps > 0.0) || !eps.is_finite() {
            return Err(Error::domain(format!(
                "epsilon must be positive, got {eps}"
            )));
        }
        let (d, m) = (model.dim(), model.noise_dim());
        Ok(Self {
            model,
            d,
            m,
            dt,
            eps,
            sc: Scratch::new(d, m),
            x: x0.to_vec(),
            local_time: 0.0,
            last_dl: 0.0,
            steps: 0,
            sep: None,
            flow: None,
        })
    }

    /// Tracks `φ(x0 + base·v) − φ(x0)`.
    pub fn with_separation(mut self, v: &[f64], base: f64, mode: SeparationMode) -> Self {
        self.sep = Some(Separation {
            delta: Scaled::new(v.to_vec(), base),
            mode,
        });
        self
    }

    pub fn with_flow(mut self) -> Self {
        self.flow = Some(Scaled::new(identity(self.d), 1.0));
        self
    }

    pub fn step(&mut self, dw: &[f64]) -> Result<()> {
        let Engine {
            model,
            d,
            m,
            dt,
            eps,
            sc,
            x,
            sep,
            flow,
            ..
        } = self;
        let (d, m, dt) = (*d, *m, *dt);
        let lambda = model.lambda();
        let dl = occupation_increment(x[d - 1], dt, *eps);
        model.alpha_into(x, &mut sc.a);
        model.sigma_into(x, &mut sc.s);

        let linear_sep = match sep {
            Some(s) if s.mode == SeparationMode::Hybrid => {
                let x2: f64 = x.iter().map(|v| v * v).sum();
                s.delta
                    .norm_sq_below(LINEARIZE_REL * LINEARIZE_REL * (1.0 + x2))
            }
            _ => false,
        };
        if flow.is_some() || linear_sep {
            if dl > 0.0 {
                sc.proj.copy_from_slice(x);
                sc.proj[d - 1] = 0.0;
                jump_column(model, &sc.proj, &mut sc.col, &mut sc.tmp);
            }
        }
        if let Some(y) = flow {
            sc.load_jacobians(model, x);
            linear_update(&mut y.u, d, d, m, lambda, dt, dl, dw, sc);
            y.renorm();
        }
        if let Some(s) = sep {
            if linear_sep {
                linear_vector_update(model, x, &mut s.delta.u, lambda, dt, dl, dw, sc);
            } else {
                s.delta.write_value(&mut sc.y);
                for i in 0..d {
                    sc.y[i] += x[i];
                }
                model.alpha_into(&sc.y, &mut sc.a2);
                model.sigma_into(&sc.y, &mut sc.s2);
                let contraction = 1.0 - lambda * dt;
                for u in s.delta.u.iter_mut() {
                    *u *= contraction;
                }
                for i in 0..d {
                    let mut inc = (sc.a2[i] - sc.a[i]) * dt;
                    for k in 0..m {
                        inc += (sc.s2[i * m + k] - sc.s[i * m + k]) * dw[k];
                    }
                    sc.inc[i] = inc;
                }
                s.delta.add_absolute(&mut sc.inc);
            }
            s.delta.renorm();
        }
        for i in 0..d {
            let mut inc = (sc.a[i] - lambda * x[i]) * dt;
            for k in 0..m {
                inc += sc.s[i * m + k] * dw[k];
            }
            x[i] += inc;
        }
        self.local_time += dl;
        self.last_dl = dl;
        self.steps += 1;
        if !self.x.iter().all(|v| v.is_finite()) {
            return Err(Error::Diverged { step: self.steps });
        }
        Ok(())
    }

    /// `ln|φ(x0 + base·v) − φ(x0)|`.
    pub fn ln_separation(&self) -> f64 {
        self.sep
            .as_ref()
            .map_or(f64::NEG_INFINITY, |s| s.delta.ln_norm())
    }
}

/// `v ← v(1 − λdt) + dt ∇α v + ΔL · D(πx) v + Σ_k Δw_k ∇σ_k v` for a
/// `d × cols` block `v`, using the Jacobians already in `sc`.
#[allow(clippy::too_many_arguments)]
fn linear_update(
    v: &mut [f64],
    d: usize,
    cols: usize,
    m: usize,
    lambda: f64,
    dt: f64,
    dl: f64,
    dw: &[f64],
    sc: &mut Scratch,
) {
    let acc = &mut sc.acc[..d * cols];
    let contraction = 1.0 - lambda * dt;
    for (o, x) in acc.iter_mut().zip(v.iter()) {
        *o = x * contraction;
    }
    let blocks = std::iter::once((&sc.ja[..], dt, sc.ja_zero)).chain(
        sc.js
            .chunks_exact(d * d)
            .zip(dw)
            .zip(&sc.js_zero)
            .map(|((b, &w), &z)| (b, w, z)),
    );
    for (block, scale, zero) in blocks.take(m + 1) {
        if zero {
            continue;
        }
        if cols == 1 {
            gemv_acc(block, v, scale, acc);
        } else {
            gemm_acc(d, block, v, scale, acc);
        }
    }
    if dl > 0.0 {
        let last = &v[(d - 1) * cols..d * cols];
        for i in 0..d {
            let c = sc.col[i] * dl;
            if c != 0.0 {
                for j in 0..cols {
                    acc[i * cols + j] += c * last[j];
                }
            }
        }
    }
    v.copy_from_slice(acc);
}

/// [`linear_update`] for a single vector, through the Jacobian-vector hooks.
#[allow(clippy::too_many_arguments)]
fn linear_vector_update(
    model: &HyperplaneDriftModel,
    x: &[f64],
    v: &mut [f64],
    lambda: f64,
    dt: f64,
    dl: f64,
    dw: &[f64],
    sc: &mut Scratch,
) {
    let d = v.len();
    let acc = &mut sc.acc[..d];
    let contraction = 1.0 - lambda * dt;
    for (o, x) in acc.iter_mut().zip(v.iter()) {
        *o = x * contraction;
    }
    let c = model.coefficients();
    c.alpha_jacobian_apply(Side::of(x), x, v, dt, acc);
    c.sigma_jacobian_apply(x, v, dw, acc);
    if dl > 0.0 {
        let last = v[d - 1] * dl;
        for (o, c) in acc.iter_mut().zip(&sc.col) {
            *o += c * last;
        }
    }
    v.copy_from_slice(acc);
}

/// States and occupation increments of one Euler path.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Trajectory {
    pub grid: TimeGrid,
    pub dim: usize,
    /// `(n_steps + 1) × d`, row-major.
    pub states: Vec<f64>,
    pub local_time_increments: Vec<f64>,
    pub epsilon: f64,
}

impl Trajectory {
    pub fn state(&self, n: usize) -> &[f64] {
        &self.states[n * self.dim..(n + 1) * self.dim]
    }

    pub fn final_state(&self) -> &[f64] {
        self.state(self.grid.n_steps)
    }

    pub fn total_local_time(&self) -> f64 {
        self.local_time_increments.iter().sum()
    }
}

/// `Y_n = ∇φ_{t_n}`, `(n_steps + 1) × d × d`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FlowPath {
    pub grid: TimeGrid,
    pub dim: usize,
    pub matrices: Vec<f64>,
}

impl FlowPath {
    pub fn matrix(&self, n: usize) -> &[f64] {
        let dd = self.dim * self.dim;
        &self.matrices[n * dd..(n + 1) * dd]
    }

    pub fn final_matrix(&self) -> &[f64] {
        self.matrix(self.grid.n_steps)
    }
}

fn check_noise(model: &HyperplaneDriftModel, w: &IncrementsView<'_>) -> Result<()> {
    if w.m != model.noise_dim() {
        return Err(Error::domain(format!(
            "increments have {} components, model expects {}",
            w.m,
            model.noise_dim()
        )));
    }
    Ok(())
}

pub fn euler_path<'a>(
    model: &HyperplaneDriftModel,
    x0: &[f64],
    w: impl Into<IncrementsView<'a>>,
    epsilon: f64,
) -> Result<Trajectory> {
    let w = w.into();
    check_noise(model, &w)?;
    let d = model.dim();
    let n = w.grid.n_steps;
    let mut eng = Engine::new(model, x0, w.grid.dt, epsilon)?;
    let mut states = Vec::with_capacity((n + 1) * d);
    let mut dls = Vec::with_capacity(n);
    states.extend_from_slice(x0);
    for k in 0..n {
        eng.step(w.row(k))?;
        states.extend_from_slice(&eng.x);
        dls.push(eng.last_dl);
    }
    Ok(Trajectory {
        grid: w.grid,
        dim: d,
        states,
        local_time_increments: dls,
        epsilon,
    })
}

/// Cumulative occupation local time, starting at 0.
pub fn occupation_local_time(traj: &Trajectory) -> Vec<f64> {
    let mut out = Vec::with_capacity(traj.local_time_increments.len() + 1);
    let mut acc = 0.0;
    out.push(acc);
    for dl in &traj.local_time_increments {
        acc += dl;
        out.push(acc);
    }
    out
}

fn check_same_grid(traj: &Trajectory, w: &IncrementsView<'_>) -> Result<()> {
    let (a, b) = (traj.grid, w.grid);
    let tol = GRID_TOL * a.dt;
    if a.n_steps != b.n_steps || a.dt != b.dt || (a.t_start - b.t_start).abs() > tol {
        return Err(Error::domain(
            "trajectory and increments live on different grids",
        ));
    }
    Ok(())
}

/// `L̃_n = 2(φ_n^d)⁺ − 2(x^d)⁺ − 2 Σ_{j<n} 1{φ_j^d > 0} Δφ_j^d`, with `Δφ^d`
/// rebuilt from the scheme's drift and noise terms.
pub fn tanaka_local_time<'a>(
    model: &HyperplaneDriftModel,
    traj: &Trajectory,
    w: impl Into<IncrementsView<'a>>,
) -> Result<Vec<f64>> {
    let w = w.into();
    check_noise(model, &w)?;
    check_same_grid(traj, &w)?;
    let (d, m) = (model.dim(), model.noise_dim());
    let lambda = model.lambda();
    let dt = traj.grid.dt;
    let mut a = vec![0.0; d];
    let mut s = vec![0.0; d * m];
    let x0d = traj.state(0)[d - 1];
    let mut integral = 0.0;
    let mut out = Vec::with_capacity(traj.grid.n_steps + 1);
    out.push(0.0);
    for n in 0..traj.grid.n_steps {
        let x = traj.state(n);
        if x[d - 1] > 0.0 {
            model.alpha_into(x, &mut a);
            model.sigma_into(x, &mut s);
            let dw = w.row(n);
            let mut inc = (a[d - 1] - lambda * x[d - 1]) * dt;
            for k in 0..m {
                inc += s[(d - 1) * m + k] * dw[k];
            }
            integral += inc;
        }
        let xd = traj.state(n + 1)[d - 1];
        out.push(2.0 * xd.max(0.0) - 2.0 * x0d.max(0.0) - 2.0 * integral);
    }
    Ok(out)
}

/// `(L_T, L̃_T / B_σ)`: occupation and Tanaka local time at the final time,
/// the latter scaled by the declared ellipticity constant.
pub fn local_time_pair<'a>(
    model: &HyperplaneDriftModel,
    traj: &Trajectory,
    w: impl Into<IncrementsView<'a>>,
) -> Result<(f64, f64)> {
    let b = model.declared().b_sigma;
    if !(b > 0.0) {
        return Err(Error::domain("B_sigma must be positive"));
    }
    let tanaka = tanaka_local_time(model, traj, w)?;
    Ok((traj.total_local_time(), tanaka[tanaka.len() - 1] / b))
}

/// `Y_{n+1} = Y_n + (−λI + ∇α(φ_n)) Y_n dt + D(π_S φ_n) Y_n ΔL_n + Σ_k ∇σ_k(φ_n) Y_n Δw_k`.
pub fn derivative_flow<'a>(
    model: &HyperplaneDriftModel,
    traj: &Trajectory,
    w: impl Into<IncrementsView<'a>>,
) -> Result<FlowPath> {
    if !model.has_jacobians() {
        return Err(Error::MissingJacobians(model.name().to_string()));
    }
    let w = w.into();
    check_noise(model, &w)?;
    check_same_grid(traj, &w)?;
    let (d, m) = (model.dim(), model.noise_dim());
    let lambda = model.lambda();
    let dt = traj.grid.dt;
    let mut sc = Scratch::new(d, m);
    let mut y = identity(d);
    let mut out = Vec::with_capacity((traj.grid.n_steps + 1) * d * d);
    out.extend_from_slice(&y);
    for n in 0..traj.grid.n_steps {
        let x = traj.state(n);
        let dl = traj.local_time_increments[n];
        sc.load_jacobians(model, x);
        if dl > 0.0 {
            sc.proj.copy_from_slice(x);
            sc.proj[d - 1] = 0.0;
            jump_column(model, &sc.proj, &mut sc.col, &mut sc.tmp);
        }
        linear_update(&mut y, d, d, m, lambda, dt, dl, w.row(n), &mut sc);
        out.extend_from_slice(&y);
    }
    Ok(FlowPath {
        grid: traj.grid,
        dim: d,
        matrices: out,
    })
}

/// `(φ_T(x + εv) − φ_T(x)) / ε` for each `ε`, both paths driven by `w`.
pub fn finite_difference_flow<'a>(
    model: &HyperplaneDriftModel,
    x: &[f64],
    v: &[f64],
    eps_list: &[f64],
    w: impl Into<IncrementsView<'a>>,
) -> Result<Vec<Vec<f64>>> {
    let w = w.into();
    check_noise(model, &w)?;
    model.check_point(x)?;
    if v.len() != model.dim() || (norm(v) - 1.0).abs() > 1e-12 {
        return Err(Error::domain("direction must be a unit vector"));
    }
    let bandwidth = w.grid.dt.sqrt();
    eps_list
        .iter()
        .map(|&eps| {
            if !(eps > 0.0) || !eps.is_finite() {
                return Err(Error::domain(format!(
                    "finite-difference step must be positive, got {eps}"
                )));
            }
            let mut eng = Engine::new(model, x, w.grid.dt, bandwidth)?.with_separation(
                v,
                eps,
                SeparationMode::Exact,
            );
            for k in 0..w.grid.n_steps {
                eng.step(w.row(k))?;
            }
            Ok(eng.sep.expect("separation is tracked").delta.relative())
        })
        .collect()
}

/// `ln|φ_{t_n}(y) − φ_{t_n}(x)|` at each requested step index, both paths
/// driven by `w`.
pub fn coupled_log_separation<'a>(
    model: &HyperplaneDriftModel,
    x: &[f64],
    y: &[f64],
    w: impl Into<IncrementsView<'a>>,
    epsilon: f64,
    mode: SeparationMode,
    record: &[usize],
) -> Result<Vec<f64>> {
    let w = w.into();
    check_noise(model, &w)?;
    model.check_point(y)?;
    let v: Vec<f64> = y.iter().zip(x).map(|(a, b)| a - b).collect();
    let mut eng = Engine::new(model, x, w.grid.dt, epsilon)?.with_separation(&v, 1.0, mode);
    let mut out = vec![f64::NEG_INFINITY; record.len()];
    for n in 0..=w.grid.n_steps {
        for (o, &r) in out.iter_mut().zip(record) {
            if r == n {
                *o = eng.ln_separation();
            }
        }
        if n < w.grid.n_steps {
            eng.step(w.row(n))?;
        }
    }
    if let Some(&bad) = record.iter().find(|&&r| r > w.grid.n_steps) {
        return Err(Error::domain(format!("step {bad} is beyond the grid")));
    }
    Ok(out)
}
