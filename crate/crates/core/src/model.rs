//! SDE models whose drift may jump across the hyperplane `S = {x : x_d = 0}`.
//!
//! The equation is `dφ = (-λφ + α(φ)) dt + Σ_k σ_k(φ) dw_k`, where `α` is
//! Lipschitz on each closed half-space and `σ` is globally Lipschitz and
//! uniformly elliptic. Matrices are stored row-major; `σ` is `d × m` and its
//! column `k` is the diffusion vector `σ_k`.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{frobenius, gemv_acc, norm};

/// Step of the central finite-difference fallback for Jacobians.
pub const FD_JACOBIAN_STEP: f64 = 1e-6;

/// Half-space selector. Points on `S` belong to the upper side.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Plus,
    Minus,
}

impl Side {
    #[inline]
    pub fn of(x: &[f64]) -> Side {
        if x[x.len() - 1] >= 0.0 {
            Side::Plus
        } else {
            Side::Minus
        }
    }
}

/// Coefficient fields of a model.
///
/// `alpha` evaluates the branch for the requested side; each branch must be
/// defined on its closed half-space so one-sided limits on `S` exist.
/// The Jacobian methods default to central finite differences that never
/// straddle `S`; implementors that supply analytic Jacobians should override
/// them and return `true` from [`Coefficients::provides_jacobians`].
pub trait Coefficients: Send + Sync + fmt::Debug {
    /// `(d, m)`.
    fn dims(&self) -> (usize, usize);

    fn alpha(&self, side: Side, x: &[f64], out: &mut [f64]);

    /// Writes the `d × m` diffusion matrix.
    fn sigma(&self, x: &[f64], out: &mut [f64]);

    fn provides_jacobians(&self) -> bool {
        false
    }

    /// Writes `∂α_i/∂x_j` of the requested branch (`d × d`).
    fn alpha_jacobian(&self, side: Side, x: &[f64], out: &mut [f64]) {
        let (d, _) = self.dims();
        fd_jacobian(d, d, x, Some(side), out, |p, o| self.alpha(side, p, o));
    }

    /// Writes `∂σ_{ik}/∂x_j` at `out[k*d*d + i*d + j]`.
    fn sigma_jacobian(&self, x: &[f64], out: &mut [f64]) {
        let (d, m) = self.dims();
        let mut full = vec![0.0; d * m * d];
        fd_jacobian(d * m, d, x, None, &mut full, |p, o| self.sigma(p, o));
        // full is indexed [(i*m + k)*d + j]
        for i in 0..d {
            for k in 0..m {
                for j in 0..d {
                    out[k * d * d + i * d + j] = full[(i * m + k) * d + j];
                }
            }
        }
    }

    /// `out += scale · ∇α(x) v` on the requested branch.
    fn alpha_jacobian_apply(&self, side: Side, x: &[f64], v: &[f64], scale: f64, out: &mut [f64]) {
        let d = x.len();
        let mut j = vec![0.0; d * d];
        self.alpha_jacobian(side, x, &mut j);
        gemv_acc(&j, v, scale, out);
    }

    /// `out += Σ_k dw_k ∇σ_k(x) v`.
    fn sigma_jacobian_apply(&self, x: &[f64], v: &[f64], dw: &[f64], out: &mut [f64]) {
        let (d, m) = self.dims();
        let mut j = vec![0.0; m * d * d];
        self.sigma_jacobian(x, &mut j);
        for (block, &w) in j.chunks_exact(d * d).zip(dw) {
            gemv_acc(block, v, w, out);
        }
    }

    /// Variance of each coordinate of the stationary law when it is a known
    /// centred Gaussian.
    fn stationary_variance(&self, _lambda: f64) -> Option<f64> {
        None
    }
}

/// Central differences of `f: R^d -> R^rows`. When `side` is given the
/// stencil in the last coordinate is shifted so it stays on that side of `S`.
fn fd_jacobian(
    rows: usize,
    d: usize,
    x: &[f64],
    side: Option<Side>,
    out: &mut [f64],
    f: impl Fn(&[f64], &mut [f64]),
) {
    let h = FD_JACOBIAN_STEP;
    let mut p = x.to_vec();
    let mut fp = vec![0.0; rows];
    let mut fm = vec![0.0; rows];
    for j in 0..d {
        let (mut lo, mut hi) = (x[j] - h, x[j] + h);
        if j == d - 1 {
            match side {
                Some(Side::Plus) if lo < 0.0 => {
                    lo = x[j].max(0.0);
                    hi = lo + 2.0 * h;
                }
                Some(Side::Minus) if hi > 0.0 => {
                    hi = x[j].min(0.0);
                    lo = hi - 2.0 * h;
                }
                _ => {}
            }
        }
        p[j] = hi;
        f(&p, &mut fp);
        p[j] = lo;
        f(&p, &mut fm);
        p[j] = x[j];
        for i in 0..rows {
            out[i * d + j] = (fp[i] - fm[i]) / (hi - lo);
        }
    }
}

/// Declared regularity constants of a model. All matrix norms are
/// Hilbert–Schmidt and all vector norms Euclidean.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConstants {
    /// Lipschitz constant of `α` within each open half-space.
    #[serde(rename = "K_alpha_tilde")]
    pub k_alpha_tilde: f64,
    /// Global Lipschitz constant of `σ`.
    #[serde(rename = "K_sigma_tilde")]
    pub k_sigma_tilde: f64,
    /// Essential supremum of `|∇α|`.
    #[serde(rename = "K_alpha")]
    pub k_alpha: f64,
    /// Essential supremum of `|∇σ|`, with `|∇σ|² = Σ_k |∇σ_k|²`.
    #[serde(rename = "K_sigma")]
    pub k_sigma: f64,
    pub norm_alpha_inf: f64,
    /// Supremum of the last drift component.
    pub norm_alpha_d_inf: f64,
    pub norm_sigma_inf: f64,
    /// Uniform ellipticity: `θ*σσ*θ ≥ B_σ|θ|²`.
    #[serde(rename = "B_sigma")]
    pub b_sigma: f64,
    /// Supremum over `S` of `|D(x)|`.
    #[serde(rename = "norm_D_inf")]
    pub norm_d_inf: f64,
}

impl ModelConstants {
    pub fn fields(&self) -> [(&'static str, f64); 9] {
        [
            ("K_alpha_tilde", self.k_alpha_tilde),
            ("K_sigma_tilde", self.k_sigma_tilde),
            ("K_alpha", self.k_alpha),
            ("K_sigma", self.k_sigma),
            ("norm_alpha_inf", self.norm_alpha_inf),
            ("norm_alpha_d_inf", self.norm_alpha_d_inf),
            ("norm_sigma_inf", self.norm_sigma_inf),
            ("B_sigma", self.b_sigma),
            ("norm_D_inf", self.norm_d_inf),
        ]
    }

    fn check(&self) -> Result<()> {
        for (name, v) in self.fields() {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::Config(format!(
                    "declared constant {name} must be finite and non-negative, got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// Parameterised models shipped with the library.
#[derive(Debug, Clone, PartialEq)]
pub enum BuiltinKind {
    /// `α ≡ 0`, `σ = scale · I`.
    OrnsteinUhlenbeck { scale: f64 },
    /// `α = (0, …, 0, upper)` above `S` and `(0, …, 0, lower)` below, `σ = I`.
    BangBang { upper: f64, lower: f64 },
    /// `α^i = a sin(x^{i+1 mod d})` plus `±jump/2` on the last component,
    /// `σ = diag(s + b sin x^i)`.
    SmoothLipschitz { a: f64, jump: f64, s: f64, b: f64 },
}

impl BuiltinKind {
    pub const NAMES: [&'static str; 3] = ["ou", "bang_bang", "smooth_lipschitz"];

    pub fn from_params(name: &str, params: &BTreeMap<String, f64>) -> Result<Self> {
        let allowed: &[&str] = match name {
            "ou" => &["sigma"],
            "bang_bang" => &["c", "c_plus", "c_minus"],
            "smooth_lipschitz" => &["a", "jump", "s", "b"],
            _ => {
                return Err(Error::Config(format!(
                    "unknown model `{name}` (expected one of {:?})",
                    Self::NAMES
                )))
            }
        };
        if let Some(key) = params.keys().find(|k| !allowed.contains(&k.as_str())) {
            return Err(Error::Config(format!(
                "unknown parameter `{key}` for model `{name}`"
            )));
        }
        for (k, v) in params {
            if !v.is_finite() {
                return Err(Error::Config(format!("parameter `{k}` must be finite")));
            }
        }
        let get = |k: &str, default: f64| params.get(k).copied().unwrap_or(default);
        let kind = match name {
            "ou" => BuiltinKind::OrnsteinUhlenbeck {
                scale: get("sigma", 1.0),
            },
            "bang_bang" => {
                let c = get("c", 0.5);
                BuiltinKind::BangBang {
                    upper: get("c_plus", c),
                    lower: get("c_minus", -c),
                }
            }
            _ => BuiltinKind::SmoothLipschitz {
                a: get("a", 0.3),
                jump: get("jump", 0.4),
                s: get("s", 1.0),
                b: get("b", 0.2),
            },
        };
        kind.check()?;
        Ok(kind)
    }

    fn check(&self) -> Result<()> {
        match *self {
            BuiltinKind::OrnsteinUhlenbeck { scale } if scale == 0.0 => {
                Err(Error::Config("ou: sigma must be nonzero".into()))
            }
            BuiltinKind::SmoothLipschitz { s, b, .. } if !(s > b.abs()) => Err(Error::Config(
                "smooth_lipschitz: requires s > |b| for ellipticity".into(),
            )),
            _ => Ok(()),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            BuiltinKind::OrnsteinUhlenbeck { .. } => "ou",
            BuiltinKind::BangBang { .. } => "bang_bang",
            BuiltinKind::SmoothLipschitz { .. } => "smooth_lipschitz",
        }
    }

    /// Sharp constants for this kind in dimension `d`.
    pub fn exact_constants(&self, d: usize) -> ModelConstants {
        let sd = (d as f64).sqrt();
        match *self {
            BuiltinKind::OrnsteinUhlenbeck { scale } => ModelConstants {
                k_alpha_tilde: 0.0,
                k_sigma_tilde: 0.0,
                k_alpha: 0.0,
                k_sigma: 0.0,
                norm_alpha_inf: 0.0,
                norm_alpha_d_inf: 0.0,
                norm_sigma_inf: scale.abs() * sd,
                b_sigma: scale * scale,
                norm_d_inf: 0.0,
            },
            BuiltinKind::BangBang { upper, lower } => {
                let amax = upper.abs().max(lower.abs());
                ModelConstants {
                    k_alpha_tilde: 0.0,
                    k_sigma_tilde: 0.0,
                    k_alpha: 0.0,
                    k_sigma: 0.0,
                    norm_alpha_inf: amax,
                    norm_alpha_d_inf: amax,
                    norm_sigma_inf: sd,
                    b_sigma: 1.0,
                    norm_d_inf: (upper - lower).abs(),
                }
            }
            BuiltinKind::SmoothLipschitz { a, jump, s, b } => {
                let (a, b) = (a.abs(), b.abs());
                let last = a + 0.5 * jump.abs();
                ModelConstants {
                    k_alpha_tilde: a,
                    k_sigma_tilde: b,
                    k_alpha: a * sd,
                    k_sigma: b * sd,
                    norm_alpha_inf: ((d as f64 - 1.0) * a * a + last * last).sqrt(),
                    norm_alpha_d_inf: last,
                    norm_sigma_inf: (s + b) * sd,
                    b_sigma: (s - b) * (s - b),
                    norm_d_inf: jump.abs(),
                }
            }
        }
    }
}

#[derive(Debug, Clone)]
struct Builtin {
    kind: BuiltinKind,
    d: usize,
}

impl Coefficients for Builtin {
    fn dims(&self) -> (usize, usize) {
        (self.d, self.d)
    }

    fn alpha(&self, side: Side, x: &[f64], out: &mut [f64]) {
        let d = self.d;
        match self.kind {
            BuiltinKind::OrnsteinUhlenbeck { .. } => out.fill(0.0),
            BuiltinKind::BangBang { upper, lower } => {
                out.fill(0.0);
                out[d - 1] = match side {
                    Side::Plus => upper,
                    Side::Minus => lower,
                };
            }
            BuiltinKind::SmoothLipschitz { a, jump, .. } => {
                for i in 0..d {
                    out[i] = a * x[(i + 1) % d].sin();
                }
                out[d - 1] += match side {
                    Side::Plus => 0.5 * jump,
                    Side::Minus => -0.5 * jump,
                };
            }
        }
    }

    fn sigma(&self, x: &[f64], out: &mut [f64]) {
        let d = self.d;
        out.fill(0.0);
        for i in 0..d {
            out[i * d + i] = match self.kind {
                BuiltinKind::OrnsteinUhlenbeck { scale } => scale,
                BuiltinKind::BangBang { .. } => 1.0,
                BuiltinKind::SmoothLipschitz { s, b, .. } => s + b * x[i].sin(),
            };
        }
    }

    fn provides_jacobians(&self) -> bool {
        true
    }

    fn alpha_jacobian(&self, _side: Side, x: &[f64], out: &mut [f64]) {
        out.fill(0.0);
        if let BuiltinKind::SmoothLipschitz { a, .. } = self.kind {
            let d = self.d;
            for i in 0..d {
                let j = (i + 1) % d;
                out[i * d + j] += a * x[j].cos();
            }
        }
    }

    fn sigma_jacobian(&self, x: &[f64], out: &mut [f64]) {
        out.fill(0.0);
        if let BuiltinKind::SmoothLipschitz { b, .. } = self.kind {
            let d = self.d;
            for k in 0..d {
                out[k * d * d + k * d + k] = b * x[k].cos();
            }
        }
    }

    fn alpha_jacobian_apply(&self, _side: Side, x: &[f64], v: &[f64], scale: f64, out: &mut [f64]) {
        if let BuiltinKind::SmoothLipschitz { a, .. } = self.kind {
            let d = self.d;
            for i in 0..d {
                let j = (i + 1) % d;
                out[i] += scale * a * x[j].cos() * v[j];
            }
        }
    }

    fn sigma_jacobian_apply(&self, x: &[f64], v: &[f64], dw: &[f64], out: &mut [f64]) {
        if let BuiltinKind::SmoothLipschitz { b, .. } = self.kind {
            for k in 0..self.d {
                out[k] += dw[k] * b * x[k].cos() * v[k];
            }
        }
    }

    fn stationary_variance(&self, lambda: f64) -> Option<f64> {
        match self.kind {
            BuiltinKind::OrnsteinUhlenbeck { scale } => Some(scale * scale / (2.0 * lambda)),
            _ => None,
        }
    }
}

/// An SDE model: linear pullback rate, coefficient fields and declared
/// constants. Immutable after construction and cheap to clone.
#[derive(Clone, Debug)]
pub struct HyperplaneDriftModel {
    name: String,
    d: usize,
    m: usize,
    lambda: f64,
    coefficients: Arc<dyn Coefficients>,
    declared: ModelConstants,
}

impl HyperplaneDriftModel {
    pub fn new(
        name: impl Into<String>,
        lambda: f64,
        coefficients: Arc<dyn Coefficients>,
        declared: ModelConstants,
    ) -> Result<Self> {
        let (d, m) = coefficients.dims();
        if d == 0 || m == 0 {
            return Err(Error::Config("dimensions d and m must be positive".into()));
        }
        if !(lambda.is_finite() && lambda > 0.0) {
            return Err(Error::Config(format!(
                "lambda must be positive, got {lambda}"
            )));
        }
        declared.check()?;
        Ok(Self {
            name: name.into(),
            d,
            m,
            lambda,
            coefficients,
            declared,
        })
    }

    /// Built-in model with its sharp constants as the declared ones.
    pub fn builtin(
        name: &str,
        d: usize,
        lambda: f64,
        params: &BTreeMap<String, f64>,
    ) -> Result<Self> {
        let kind = BuiltinKind::from_params(name, params)?;
        let declared = kind.exact_constants(d);
        Self::from_kind(kind, d, lambda, declared)
    }

    pub fn from_kind(
        kind: BuiltinKind,
        d: usize,
        lambda: f64,
        declared: ModelConstants,
    ) -> Result<Self> {
        if d == 0 {
            return Err(Error::Config("d must be positive".into()));
        }
        kind.check()?;
        let name = kind.name();
        Self::new(name, lambda, Arc::new(Builtin { kind, d }), declared)
    }

    pub fn ornstein_uhlenbeck(d: usize, lambda: f64) -> Result<Self> {
        let kind = BuiltinKind::OrnsteinUhlenbeck { scale: 1.0 };
        Self::from_kind(kind.clone(), d, lambda, kind.exact_constants(d))
    }

    /// Drift component `±c` in the last coordinate, unit diffusion.
    pub fn bang_bang(d: usize, lambda: f64, c: f64) -> Result<Self> {
        let kind = BuiltinKind::BangBang {
            upper: c,
            lower: -c,
        };
        Self::from_kind(kind.clone(), d, lambda, kind.exact_constants(d))
    }

    pub fn smooth_lipschitz(d: usize, lambda: f64) -> Result<Self> {
        Self::builtin("smooth_lipschitz", d, lambda, &BTreeMap::new())
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn noise_dim(&self) -> usize {
        self.m
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn declared(&self) -> &ModelConstants {
        &self.declared
    }

    pub fn coefficients(&self) -> &dyn Coefficients {
        self.coefficients.as_ref()
    }

    pub fn has_jacobians(&self) -> bool {
        self.coefficients.provides_jacobians()
    }

    /// Same coefficients with a different pullback rate.
    pub fn with_lambda(&self, lambda: f64) -> Result<Self> {
        Self::new(
            self.name.clone(),
            lambda,
            self.coefficients.clone(),
            self.declared,
        )
    }

    pub fn with_declared(&self, declared: ModelConstants) -> Result<Self> {
        Self::new(
            self.name.clone(),
            self.lambda,
            self.coefficients.clone(),
            declared,
        )
    }

    #[inline]
    pub(crate) fn alpha_into(&self, x: &[f64], out: &mut [f64]) {
        self.coefficients.alpha(Side::of(x), x, out);
    }

    #[inline]
    pub(crate) fn sigma_into(&self, x: &[f64], out: &mut [f64]) {
        self.coefficients.sigma(x, out);
    }

    pub(crate) fn check_point(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.d {
            return Err(Error::domain(format!(
                "expected a {}-vector, got length {}",
                self.d,
                x.len()
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidState(format!("non-finite state {x:?}")));
        }
        Ok(())
    }
}

/// `-λx + α(x)`, with the upper branch used on `S`.
pub fn drift_eval(model: &HyperplaneDriftModel, x: &[f64]) -> Result<Vec<f64>> {
    model.check_point(x)?;
    let mut out = vec![0.0; model.d];
    model.alpha_into(x, &mut out);
    for (o, xi) in out.iter_mut().zip(x) {
        *o -= model.lambda * xi;
    }
    Ok(out)
}

/// The `d × d` matrix whose last column is `α₊(x) − α₋(x)` for `x ∈ S`.
pub fn jump_matrix(model: &HyperplaneDriftModel, x: &[f64]) -> Result<Vec<f64>> {
    model.check_point(x)?;
    if x[model.d - 1] != 0.0 {
        return Err(Error::domain(format!(
            "jump matrix is defined on S only, got x_d = {}",
            x[model.d - 1]
        )));
    }
    let mut out = vec![0.0; model.d * model.d];
    jump_matrix_into(model, x, &mut out);
    Ok(out)
}

/// Writes `α₊(x) − α₋(x)`, the only nonzero column of the jump matrix.
pub(crate) fn jump_column(
    model: &HyperplaneDriftModel,
    x: &[f64],
    col: &mut [f64],
    tmp: &mut [f64],
) {
    model.coefficients.alpha(Side::Plus, x, col);
    model.coefficients.alpha(Side::Minus, x, tmp);
    for (c, t) in col.iter_mut().zip(tmp.iter()) {
        *c -= t;
    }
}

fn jump_matrix_into(model: &HyperplaneDriftModel, x: &[f64], out: &mut [f64]) {
    let d = model.d;
    let mut col = vec![0.0; d];
    let mut tmp = vec![0.0; d];
    jump_column(model, x, &mut col, &mut tmp);
    out.fill(0.0);
    for i in 0..d {
        out[i * d + d - 1] = col[i];
    }
}

/// Sampling region for [`validate_model`]: the cube `[-half_width, half_width]^d`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamplingBox {
    pub half_width: f64,
}

impl Default for SamplingBox {
    fn default() -> Self {
        Self { half_width: 5.0 }
    }
}

/// Whether the sampled value must stay below or above the declared one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    AtMost,
    AtLeast,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConditionCheck {
    /// Property the constant belongs to, e.g. `drift_bound` or `ellipticity`.
    pub condition: &'static str,
    pub quantity: &'static str,
    pub declared: f64,
    pub sampled: f64,
    pub direction: Direction,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    pub model: String,
    pub n_samples: usize,
    pub checks: Vec<ConditionCheck>,
    pub pass: bool,
}

impl ValidationReport {
    pub fn check(&self, quantity: &str) -> Option<&ConditionCheck> {
        self.checks.iter().find(|c| c.quantity == quantity)
    }
}

const VALIDATION_RTOL: f64 = 1e-9;

fn condition(
    condition: &'static str,
    quantity: &'static str,
    declared: f64,
    sampled: f64,
    direction: Direction,
) -> ConditionCheck {
    let tol = VALIDATION_RTOL * declared.abs().max(1.0);
    let pass = match direction {
        Direction::AtMost => sampled <= declared + tol,
        Direction::AtLeast => sampled >= declared - tol,
    };
    ConditionCheck {
        condition,
        quantity,
        declared,
        sampled,
        direction,
        pass,
    }
}

/// Samples the coefficients and compares every declared constant with the
/// largest (or, for ellipticity, smallest) value observed.
pub fn validate_model(
    model: &HyperplaneDriftModel,
    n_samples: usize,
    region: SamplingBox,
    seed: u64,
) -> Result<ValidationReport> {
    if n_samples == 0 {
        return Err(Error::domain("n_samples must be at least 1"));
    }
    if !(region.half_width > 0.0 && region.half_width.is_finite()) {
        return Err(Error::domain("sampling box half width must be positive"));
    }
    let (d, m) = (model.d, model.m);
    let coeffs = model.coefficients.as_ref();
    let h = region.half_width;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut x = vec![0.0; d];
    let mut y = vec![0.0; d];
    let mut ax = vec![0.0; d];
    let mut ay = vec![0.0; d];
    let mut sx = vec![0.0; d * m];
    let mut sy = vec![0.0; d * m];
    let mut ja = vec![0.0; d * d];
    let mut js = vec![0.0; m * d * d];
    let mut diff = vec![0.0; d];

    let mut sup_alpha = 0.0f64;
    let mut sup_alpha_d = 0.0f64;
    let mut sup_sigma = 0.0f64;
    let mut lip_alpha = 0.0f64;
    let mut lip_sigma = 0.0f64;
    let mut sup_grad_alpha = 0.0f64;
    let mut sup_grad_sigma = 0.0f64;
    let mut min_rayleigh = f64::INFINITY;
    let mut sup_jump = 0.0f64;

    for _ in 0..n_samples {
        for v in x.iter_mut() {
            *v = rng.random_range(-h..=h);
        }
        let side = Side::of(&x);

        coeffs.alpha(side, &x, &mut ax);
        sup_alpha = sup_alpha.max(norm(&ax));
        sup_alpha_d = sup_alpha_d.max(ax[d - 1].abs());
        coeffs.sigma(&x, &mut sx);
        sup_sigma = sup_sigma.max(frobenius(&sx));

        coeffs.alpha_jacobian(side, &x, &mut ja);
        sup_grad_alpha = sup_grad_alpha.max(frobenius(&ja));
        coeffs.sigma_jacobian(&x, &mut js);
        sup_grad_sigma = sup_grad_sigma.max(frobenius(&js));

        let s = DMatrix::from_row_slice(d, m, &sx);
        let gram = &s * s.transpose();
        let min_eig = gram.symmetric_eigenvalues().min();
        min_rayleigh = min_rayleigh.min(min_eig);

        // Nearby partner on the same side, at a log-uniform distance.
        let r = h * 10f64.powf(rng.random_range(-4.0..=0.0));
        for (yi, xi) in y.iter_mut().zip(&x) {
            *yi = xi + r * rng.random_range(-1.0..=1.0);
        }
        let yd = y[d - 1].abs();
        y[d - 1] = match side {
            Side::Plus => yd,
            Side::Minus => -yd.max(f64::MIN_POSITIVE),
        };
        for ((di, xi), yi) in diff.iter_mut().zip(&x).zip(&y) {
            *di = xi - yi;
        }
        let dist = norm(&diff);
        if dist > 0.0 {
            coeffs.alpha(side, &y, &mut ay);
            for (a, b) in ay.iter_mut().zip(&ax) {
                *a -= b;
            }
            lip_alpha = lip_alpha.max(norm(&ay) / dist);
            coeffs.sigma(&y, &mut sy);
            for (a, b) in sy.iter_mut().zip(&sx) {
                *a -= b;
            }
            lip_sigma = lip_sigma.max(frobenius(&sy) / dist);
        }

        // Both one-sided limits on S.
        x[d - 1] = 0.0;
        coeffs.alpha(Side::Plus, &x, &mut ax);
        coeffs.alpha(Side::Minus, &x, &mut ay);
        sup_alpha = sup_alpha.max(norm(&ax)).max(norm(&ay));
        sup_alpha_d = sup_alpha_d.max(ax[d - 1].abs()).max(ay[d - 1].abs());
        for (a, b) in ax.iter_mut().zip(&ay) {
            *a -= b;
        }
        sup_jump = sup_jump.max(norm(&ax));
    }

    let c = &model.declared;
    use Direction::*;
    let checks = vec![
        condition(
            "drift_bound",
            "norm_alpha_inf",
            c.norm_alpha_inf,
            sup_alpha,
            AtMost,
        ),
        condition(
            "drift_bound",
            "norm_alpha_d_inf",
            c.norm_alpha_d_inf,
            sup_alpha_d,
            AtMost,
        ),
        condition(
            "drift_lipschitz",
            "K_alpha_tilde",
            c.k_alpha_tilde,
            lip_alpha,
            AtMost,
        ),
        condition(
            "drift_lipschitz",
            "K_alpha",
            c.k_alpha,
            sup_grad_alpha,
            AtMost,
        ),
        condition(
            "diffusion_bound",
            "norm_sigma_inf",
            c.norm_sigma_inf,
            sup_sigma,
            AtMost,
        ),
        condition(
            "diffusion_lipschitz",
            "K_sigma_tilde",
            c.k_sigma_tilde,
            lip_sigma,
            AtMost,
        ),
        condition(
            "diffusion_lipschitz",
            "K_sigma",
            c.k_sigma,
            sup_grad_sigma,
            AtMost,
        ),
        condition("ellipticity", "B_sigma", c.b_sigma, min_rayleigh, AtLeast),
        condition("jump", "norm_D_inf", c.norm_d_inf, sup_jump, AtMost),
    ];
    let pass = checks.iter().all(|c| c.pass);
    Ok(ValidationReport {
        model: model.name.clone(),
        n_samples,
        checks,
        pass,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn bang_bang() -> HyperplaneDriftModel {
        HyperplaneDriftModel::bang_bang(2, 1.0, 0.5).unwrap()
    }

    #[test]
    fn drift_of_ou() {
        let ou = HyperplaneDriftModel::ornstein_uhlenbeck(2, 1.0).unwrap();
        assert_eq!(drift_eval(&ou, &[3.0, 4.0]).unwrap(), vec![-3.0, -4.0]);
    }

    #[test]
    fn drift_of_bang_bang_below_and_on_s() {
        let m = bang_bang();
        let below = drift_eval(&m, &[0.2, -0.1]).unwrap();
        assert_relative_eq!(below[0], -0.2);
        assert_relative_eq!(below[1], -0.4);
        // On S the upper branch is used.
        assert_eq!(drift_eval(&m, &[1.0, 0.0]).unwrap(), vec![-1.0, 0.5]);
    }

    #[test]
    fn drift_rejects_non_finite() {
        let m = bang_bang();
        assert!(matches!(
            drift_eval(&m, &[f64::NAN, 0.0]),
            Err(Error::InvalidState(_))
        ));
        assert!(matches!(
            drift_eval(&m, &[0.0, f64::INFINITY]),
            Err(Error::InvalidState(_))
        ));
    }

    #[test]
    fn jump_matrices() {
        let smooth = HyperplaneDriftModel::builtin(
            "smooth_lipschitz",
            3,
            1.0,
            &BTreeMap::from([("jump".to_string(), 0.0)]),
        )
        .unwrap();
        assert!(jump_matrix(&smooth, &[0.3, -1.2, 0.0])
            .unwrap()
            .iter()
            .all(|&v| v == 0.0));

        let bb = jump_matrix(&bang_bang(), &[0.7, 0.0]).unwrap();
        assert_eq!(bb, vec![0.0, 0.0, 0.0, 1.0]);
        assert_relative_eq!(frobenius(&bb), 1.0);

        let scalar = HyperplaneDriftModel::builtin(
            "bang_bang",
            1,
            1.0,
            &BTreeMap::from([("c_plus".to_string(), 2.0), ("c_minus".to_string(), -1.0)]),
        )
        .unwrap();
        assert_eq!(jump_matrix(&scalar, &[0.0]).unwrap(), vec![3.0]);
        assert_eq!(scalar.declared().norm_d_inf, 3.0);
    }

    #[test]
    fn jump_matrix_off_s_is_a_domain_error() {
        assert!(matches!(
            jump_matrix(&bang_bang(), &[0.0, 0.1]),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn unknown_model_and_parameter_rejected() {
        assert!(HyperplaneDriftModel::builtin("nope", 2, 1.0, &BTreeMap::new()).is_err());
        let p = BTreeMap::from([("gamma".to_string(), 1.0)]);
        assert!(HyperplaneDriftModel::builtin("ou", 2, 1.0, &p).is_err());
    }

    #[test]
    fn ou_validation_has_unit_rayleigh_quotient() {
        let ou = HyperplaneDriftModel::ornstein_uhlenbeck(2, 1.0).unwrap();
        let report = validate_model(&ou, 200, SamplingBox::default(), 1).unwrap();
        assert!(report.pass, "{report:?}");
        assert_relative_eq!(
            report.check("B_sigma").unwrap().sampled,
            1.0,
            epsilon = 1e-12
        );
    }

    #[test]
    fn under_declared_drift_bound_fails() {
        let m = bang_bang();
        let mut declared = *m.declared();
        declared.norm_alpha_inf = 0.4;
        let m = m.with_declared(declared).unwrap();
        let report = validate_model(&m, 100, SamplingBox::default(), 2).unwrap();
        assert!(!report.pass);
        let a1 = report.check("norm_alpha_inf").unwrap();
        assert!(!a1.pass);
        assert_relative_eq!(a1.sampled, 0.5);
    }

    #[test]
    fn correct_declarations_pass() {
        let report = validate_model(&bang_bang(), 10_000, SamplingBox::default(), 3).unwrap();
        assert!(report.pass, "{report:?}");
        let smooth = HyperplaneDriftModel::smooth_lipschitz(2, 1.0).unwrap();
        let report = validate_model(&smooth, 10_000, SamplingBox::default(), 4).unwrap();
        assert!(report.pass, "{report:?}");
    }

    #[test]
    fn declaring_zero_jump_for_a_jumping_drift_fails() {
        let m = bang_bang();
        let mut declared = *m.declared();
        declared.norm_d_inf = 0.0;
        let report = validate_model(
            &m.with_declared(declared).unwrap(),
            50,
            SamplingBox::default(),
            5,
        )
        .unwrap();
        assert!(!report.check("norm_D_inf").unwrap().pass);
    }

    #[test]
    fn analytic_jacobians_match_finite_differences() {
        #[derive(Debug)]
        struct NoJac(Builtin);
        impl Coefficients for NoJac {
            fn dims(&self) -> (usize, usize) {
                self.0.dims()
            }
            fn alpha(&self, side: Side, x: &[f64], out: &mut [f64]) {
                self.0.alpha(side, x, out)
            }
            fn sigma(&self, x: &[f64], out: &mut [f64]) {
                self.0.sigma(x, out)
            }
        }
        let kind = BuiltinKind::from_params("smooth_lipschitz", &BTreeMap::new()).unwrap();
        let exact = Builtin {
            kind: kind.clone(),
            d: 3,
        };
        let fd = NoJac(Builtin { kind, d: 3 });
        assert!(!fd.provides_jacobians());
        // The last point sits on S, where the upper-branch stencil is one-sided.
        for x in [[0.3, -1.1, 0.7], [2.0, 0.4, -0.2], [-0.5, 1.5, 0.0]] {
            let (mut a, mut b) = (vec![0.0; 9], vec![0.0; 9]);
            exact.alpha_jacobian(Side::of(&x), &x, &mut a);
            fd.alpha_jacobian(Side::of(&x), &x, &mut b);
            for (u, v) in a.iter().zip(&b) {
                assert!((u - v).abs() < 1e-6, "{a:?} vs {b:?}");
            }
            let (mut a, mut b) = (vec![0.0; 27], vec![0.0; 27]);
            exact.sigma_jacobian(&x, &mut a);
            fd.sigma_jacobian(&x, &mut b);
            for (u, v) in a.iter().zip(&b) {
                assert!((u - v).abs() < 1e-6);
            }
            // Jacobian-vector products: analytic overrides against the defaults.
            let v = [0.2, -1.0, 0.5];
            let dw = [0.03, -0.01, 0.02];
            let (mut a, mut b) = (vec![1.0; 3], vec![1.0; 3]);
            exact.alpha_jacobian_apply(Side::of(&x), &x, &v, 0.1, &mut a);
            fd.alpha_jacobian_apply(Side::of(&x), &x, &v, 0.1, &mut b);
            exact.sigma_jacobian_apply(&x, &v, &dw, &mut a);
            fd.sigma_jacobian_apply(&x, &v, &dw, &mut b);
            for (u, w) in a.iter().zip(&b) {
                assert!((u - w).abs() < 1e-7, "{a:?} vs {b:?}");
            }
        }
    }

    #[test]
    fn negative_declared_constant_is_rejected() {
        let mut c = *bang_bang().declared();
        c.b_sigma = -1.0;
        assert!(bang_bang().with_declared(c).is_err());
    }
}
