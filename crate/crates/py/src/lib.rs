//! Python bindings: models, constants, path simulation and the Monte Carlo
//! checks. Reports are returned as plain dicts and lists.

use std::collections::BTreeMap;

use hypersde::montecarlo::decay_curve as decay_curve_rs;
use hypersde::stationary::{pullback_decay, pullback_ensemble, STATIONARITY_ALPHA};
use hypersde::{
    HyperplaneDriftModel, ModelConstants, Numerics, SamplingBox, SeparationMode, TimeGrid,
};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;
use pythonize::{depythonize, pythonize};
use serde::Serialize;

fn to_py(e: hypersde::Error) -> PyErr {
    match e {
        hypersde::Error::Diverged { .. } => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn out<T: Serialize>(py: Python<'_>, value: &T) -> PyResult<Py<PyAny>> {
    Ok(pythonize(py, value)
        .map_err(|e| PyRuntimeError::new_err(e.to_string()))?
        .unbind())
}

fn numerics(dt: f64, n_paths: usize, seed: u64, eps: Option<f64>, allowance_coef: f64) -> Numerics {
    let n = Numerics::new(dt, n_paths, seed).with_allowance_coef(allowance_coef);
    match eps {
        Some(e) => n.with_eps(e),
        None => n,
    }
}

/// SDE with a drift that jumps across `{x_d = 0}`.
#[pyclass(frozen, skip_from_py_object, name = "Model", module = "hypersde")]
#[derive(Clone)]
struct Model {
    inner: HyperplaneDriftModel,
}

#[pymethods]
impl Model {
    /// Built-in model by name (`ou`, `bang_bang`, `smooth_lipschitz`).
    /// `declared` defaults to the model's exact constants.
    #[new]
    #[pyo3(signature = (name, d, lam, params=None, declared=None))]
    fn new(
        name: &str,
        d: usize,
        lam: f64,
        params: Option<BTreeMap<String, f64>>,
        declared: Option<&Bound<'_, PyDict>>,
    ) -> PyResult<Self> {
        let params = params.unwrap_or_default();
        let kind = hypersde::BuiltinKind::from_params(name, &params).map_err(to_py)?;
        let declared: ModelConstants = match declared {
            Some(dict) => {
                depythonize(dict.as_any()).map_err(|e| PyValueError::new_err(e.to_string()))?
            }
            None => kind.exact_constants(d),
        };
        let inner = HyperplaneDriftModel::from_kind(kind, d, lam, declared).map_err(to_py)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn ou(d: usize, lam: f64) -> PyResult<Self> {
        let inner = HyperplaneDriftModel::ornstein_uhlenbeck(d, lam).map_err(to_py)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    #[pyo3(signature = (d, lam, c=0.5))]
    fn bang_bang(d: usize, lam: f64, c: f64) -> PyResult<Self> {
        let inner = HyperplaneDriftModel::bang_bang(d, lam, c).map_err(to_py)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn smooth_lipschitz(d: usize, lam: f64) -> PyResult<Self> {
        let inner = HyperplaneDriftModel::smooth_lipschitz(d, lam).map_err(to_py)?;
        Ok(Self { inner })
    }

    #[getter]
    fn name(&self) -> &str {
        self.inner.name()
    }

    #[getter]
    fn d(&self) -> usize {
        self.inner.dim()
    }

    #[getter]
    fn m(&self) -> usize {
        self.inner.noise_dim()
    }

    #[getter]
    fn lam(&self) -> f64 {
        self.inner.lambda()
    }

    #[getter]
    fn declared(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        out(py, self.inner.declared())
    }

    fn with_lambda(&self, lam: f64) -> PyResult<Self> {
        let inner = self.inner.with_lambda(lam).map_err(to_py)?;
        Ok(Self { inner })
    }

    /// `α(x)`, with the upper branch on `x_d ≥ 0`.
    fn drift(&self, x: Vec<f64>) -> PyResult<Vec<f64>> {
        hypersde::drift_eval(&self.inner, &x).map_err(to_py)
    }

    /// Row-major `d × d` matrix whose last column is the drift jump.
    fn jump_matrix(&self, x: Vec<f64>) -> PyResult<Vec<f64>> {
        hypersde::jump_matrix(&self.inner, &x).map_err(to_py)
    }

    #[pyo3(signature = (n_samples=10_000, half_width=5.0, seed=0))]
    fn validate(
        &self,
        py: Python<'_>,
        n_samples: usize,
        half_width: f64,
        seed: u64,
    ) -> PyResult<Py<PyAny>> {
        let r = hypersde::validate_model(&self.inner, n_samples, SamplingBox { half_width }, seed)
            .map_err(to_py)?;
        out(py, &r)
    }

    fn __repr__(&self) -> String {
        format!(
            "Model(name={:?}, d={}, m={}, lam={:?})",
            self.inner.name(),
            self.inner.dim(),
            self.inner.noise_dim(),
            self.inner.lambda()
        )
    }
}

#[pyfunction]
fn rho(model: &Model, t: f64) -> PyResult<f64> {
    hypersde::rho(t, model.inner.lambda(), model.inner.declared()).map_err(to_py)
}

#[pyfunction]
fn lambda_threshold(py: Python<'_>, model: &Model) -> PyResult<Py<PyAny>> {
    out(
        py,
        &hypersde::lambda_threshold(model.inner.declared()).map_err(to_py)?,
    )
}

#[pyfunction]
fn decay_constants(py: Python<'_>, model: &Model) -> PyResult<Py<PyAny>> {
    let m = &model.inner;
    out(
        py,
        &hypersde::decay_constants(m.dim(), m.lambda(), m.declared()).map_err(to_py)?,
    )
}

#[pyfunction]
fn generator_bound(py: Python<'_>, model: &Model) -> PyResult<Py<PyAny>> {
    let m = &model.inner;
    out(
        py,
        &hypersde::generator_bound(m.declared(), m.lambda()).map_err(to_py)?,
    )
}

#[pyfunction]
fn khasminskii_bound(model: &Model, t: f64, t0: f64) -> PyResult<f64> {
    let m = &model.inner;
    hypersde::khasminskii_bound(t, m.lambda(), m.declared(), t0).map_err(to_py)
}

#[derive(Serialize)]
struct PathOut {
    t: Vec<f64>,
    states: Vec<Vec<f64>>,
    local_time: Vec<f64>,
    flow: Option<Vec<Vec<f64>>>,
}

/// One Euler path from `x0` on stream `stream_id` of `seed`.
#[pyfunction]
#[pyo3(signature = (model, x0, t_end, dt, seed, stream_id=0, eps=None, flow=false))]
#[allow(clippy::too_many_arguments)]
fn simulate(
    py: Python<'_>,
    model: &Model,
    x0: Vec<f64>,
    t_end: f64,
    dt: f64,
    seed: u64,
    stream_id: u64,
    eps: Option<f64>,
    flow: bool,
) -> PyResult<Py<PyAny>> {
    let m = &model.inner;
    let result = py.detach(|| -> hypersde::Result<PathOut> {
        let grid = TimeGrid::new(0.0, t_end, dt)?;
        let w = hypersde::wiener(m.noise_dim(), grid, seed, stream_id)?;
        let traj = hypersde::euler_path(m, &x0, &w, eps.unwrap_or(dt.sqrt()))?;
        let flow = if flow {
            let f = hypersde::derivative_flow(m, &traj, &w)?;
            Some((0..=grid.n_steps).map(|n| f.matrix(n).to_vec()).collect())
        } else {
            None
        };
        Ok(PathOut {
            t: (0..=grid.n_steps).map(|n| grid.time(n)).collect(),
            states: (0..=grid.n_steps).map(|n| traj.state(n).to_vec()).collect(),
            local_time: hypersde::occupation_local_time(&traj),
            flow,
        })
    });
    out(py, &result.map_err(to_py)?)
}

/// `ln |φ_t(y) − φ_t(x)|` along one shared-noise pair.
#[pyfunction]
#[pyo3(signature = (model, x, y, t_end, dt, seed, stream_id=0, eps=None))]
#[allow(clippy::too_many_arguments)]
fn coupled_log_separation(
    py: Python<'_>,
    model: &Model,
    x: Vec<f64>,
    y: Vec<f64>,
    t_end: f64,
    dt: f64,
    seed: u64,
    stream_id: u64,
    eps: Option<f64>,
) -> PyResult<Vec<f64>> {
    let m = &model.inner;
    py.detach(|| {
        let grid = TimeGrid::new(0.0, t_end, dt)?;
        let w = hypersde::wiener(m.noise_dim(), grid, seed, stream_id)?;
        let record: Vec<usize> = (0..=grid.n_steps).collect();
        hypersde::coupled_log_separation(
            m,
            &x,
            &y,
            &w,
            eps.unwrap_or(dt.sqrt()),
            SeparationMode::Hybrid,
            &record,
        )
    })
    .map_err(to_py)
}

#[pyfunction]
#[pyo3(signature = (model, x, y, times, dt, n_paths, seed, p=1.0, eps=None))]
#[allow(clippy::too_many_arguments)]
fn decay_curve(
    py: Python<'_>,
    model: &Model,
    x: Vec<f64>,
    y: Vec<f64>,
    times: Vec<f64>,
    dt: f64,
    n_paths: usize,
    seed: u64,
    p: f64,
    eps: Option<f64>,
) -> PyResult<Py<PyAny>> {
    let num = numerics(dt, n_paths, seed, eps, 1.0);
    let r = py
        .detach(|| decay_curve_rs(&model.inner, &x, &y, p, &times, &num))
        .map_err(to_py)?;
    out(py, &r)
}

#[pyfunction]
#[pyo3(signature = (model, x, y, times, dt, n_paths, seed, rate_tolerance=0.0, eps=None, allowance_coef=1.0))]
#[allow(clippy::too_many_arguments)]
fn verify_decay(
    py: Python<'_>,
    model: &Model,
    x: Vec<f64>,
    y: Vec<f64>,
    times: Vec<f64>,
    dt: f64,
    n_paths: usize,
    seed: u64,
    rate_tolerance: f64,
    eps: Option<f64>,
    allowance_coef: f64,
) -> PyResult<Py<PyAny>> {
    let num = numerics(dt, n_paths, seed, eps, allowance_coef);
    let r = py
        .detach(|| hypersde::verify_decay(&model.inner, &x, &y, &times, &num, rate_tolerance))
        .map_err(to_py)?;
    out(py, &r)
}

#[pyfunction]
#[pyo3(signature = (model, x, times, dt, n_paths, seed, orders=vec![1, 2, 3], start_grid=None, eps=None, allowance_coef=1.0))]
#[allow(clippy::too_many_arguments)]
fn local_time_moments(
    py: Python<'_>,
    model: &Model,
    x: Vec<f64>,
    times: Vec<f64>,
    dt: f64,
    n_paths: usize,
    seed: u64,
    orders: Vec<u32>,
    start_grid: Option<Vec<Vec<f64>>>,
    eps: Option<f64>,
    allowance_coef: f64,
) -> PyResult<Py<PyAny>> {
    let num = numerics(dt, n_paths, seed, eps, allowance_coef);
    let r = py
        .detach(|| {
            hypersde::local_time_moments(
                &model.inner,
                &x,
                &times,
                &orders,
                &num,
                start_grid.as_deref(),
            )
        })
        .map_err(to_py)?;
    out(py, &r)
}

#[pyfunction]
#[pyo3(signature = (model, x, t, dt, n_paths, seed, t0=None, eps=None, allowance_coef=1.0))]
#[allow(clippy::too_many_arguments)]
fn exp_local_time_moment(
    py: Python<'_>,
    model: &Model,
    x: Vec<f64>,
    t: f64,
    dt: f64,
    n_paths: usize,
    seed: u64,
    t0: Option<f64>,
    eps: Option<f64>,
    allowance_coef: f64,
) -> PyResult<Py<PyAny>> {
    let num = numerics(dt, n_paths, seed, eps, allowance_coef);
    let r = py
        .detach(|| hypersde::exp_local_time_moment(&model.inner, &x, t, &num, t0))
        .map_err(to_py)?;
    out(py, &r)
}

#[pyfunction]
#[pyo3(signature = (model, x, t, dt, n_paths, seed, n_records=10, eps=None, allowance_coef=1.0))]
#[allow(clippy::too_many_arguments)]
fn weighted_flow_moment(
    py: Python<'_>,
    model: &Model,
    x: Vec<f64>,
    t: f64,
    dt: f64,
    n_paths: usize,
    seed: u64,
    n_records: usize,
    eps: Option<f64>,
    allowance_coef: f64,
) -> PyResult<Py<PyAny>> {
    let num = numerics(dt, n_paths, seed, eps, allowance_coef);
    let r = py
        .detach(|| hypersde::weighted_flow_moment(&model.inner, &x, t, n_records, &num))
        .map_err(to_py)?;
    out(py, &r)
}

#[pyfunction]
#[pyo3(signature = (model, x, v, t, eps_list, dt, n_paths, seed, eps=None))]
#[allow(clippy::too_many_arguments)]
fn gateaux_consistency(
    py: Python<'_>,
    model: &Model,
    x: Vec<f64>,
    v: Vec<f64>,
    t: f64,
    eps_list: Vec<f64>,
    dt: f64,
    n_paths: usize,
    seed: u64,
    eps: Option<f64>,
) -> PyResult<Py<PyAny>> {
    let num = numerics(dt, n_paths, seed, eps, 1.0);
    let r = py
        .detach(|| hypersde::gateaux_consistency(&model.inner, &x, &v, t, &eps_list, &num))
        .map_err(to_py)?;
    out(py, &r)
}

#[pyfunction]
#[pyo3(signature = (model, t_eval, s_list, dt, seed, stream_id=0, eps=None))]
#[allow(clippy::too_many_arguments)]
fn pullback_sample(
    py: Python<'_>,
    model: &Model,
    t_eval: f64,
    s_list: Vec<f64>,
    dt: f64,
    seed: u64,
    stream_id: u64,
    eps: Option<f64>,
) -> PyResult<Py<PyAny>> {
    let num = numerics(dt, 2, seed, eps, 1.0);
    let r = py
        .detach(|| hypersde::pullback_sample(&model.inner, t_eval, &s_list, &num, stream_id))
        .map_err(to_py)?;
    out(py, &r)
}

/// Least-squares slope of log mean pullback differences against depth.
#[pyfunction]
#[pyo3(signature = (model, t_eval, s_list, dt, n_realizations, seed, eps=None))]
#[allow(clippy::too_many_arguments)]
fn pullback_slope(
    py: Python<'_>,
    model: &Model,
    t_eval: f64,
    s_list: Vec<f64>,
    dt: f64,
    n_realizations: usize,
    seed: u64,
    eps: Option<f64>,
) -> PyResult<Py<PyAny>> {
    let num = numerics(dt, n_realizations, seed, eps, 1.0);
    let r = py
        .detach(|| pullback_decay(&pullback_ensemble(&model.inner, t_eval, &s_list, &num)?))
        .map_err(to_py)?;
    out(py, &r)
}

#[pyfunction]
#[pyo3(signature = (model, t1, t2, depth, dt, n_realizations, seed, alpha=STATIONARITY_ALPHA, eps=None))]
#[allow(clippy::too_many_arguments)]
fn stationarity_test(
    py: Python<'_>,
    model: &Model,
    t1: f64,
    t2: f64,
    depth: f64,
    dt: f64,
    n_realizations: usize,
    seed: u64,
    alpha: f64,
    eps: Option<f64>,
) -> PyResult<Py<PyAny>> {
    let num = numerics(dt, n_realizations, seed, eps, 1.0);
    let r = py
        .detach(|| hypersde::stationarity_test(&model.inner, t1, t2, depth, &num, alpha))
        .map_err(to_py)?;
    out(py, &r)
}

#[pyfunction]
#[pyo3(signature = (model, s_start, x, times, dt, n_paths, seed, eps=None, allowance_coef=1.0))]
#[allow(clippy::too_many_arguments)]
fn second_moment_curve(
    py: Python<'_>,
    model: &Model,
    s_start: f64,
    x: Vec<f64>,
    times: Vec<f64>,
    dt: f64,
    n_paths: usize,
    seed: u64,
    eps: Option<f64>,
    allowance_coef: f64,
) -> PyResult<Py<PyAny>> {
    let num = numerics(dt, n_paths, seed, eps, allowance_coef);
    let r = py
        .detach(|| hypersde::second_moment_curve(&model.inner, s_start, &x, &times, &num))
        .map_err(to_py)?;
    out(py, &r)
}

#[pyfunction]
#[pyo3(signature = (model, t_eval, x, y, depth, dt, n_paths, seed, eps=None))]
#[allow(clippy::too_many_arguments)]
fn uniqueness_coupling(
    py: Python<'_>,
    model: &Model,
    t_eval: f64,
    x: Vec<f64>,
    y: Vec<f64>,
    depth: f64,
    dt: f64,
    n_paths: usize,
    seed: u64,
    eps: Option<f64>,
) -> PyResult<Py<PyAny>> {
    let num = numerics(dt, n_paths, seed, eps, 1.0);
    let r = py
        .detach(|| hypersde::uniqueness_coupling(&model.inner, t_eval, &x, &y, depth, &num))
        .map_err(to_py)?;
    out(py, &r)
}

#[pymodule]
#[pyo3(name = "hypersde")]
fn hypersde_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_class::<Model>()?;
    m.add_function(wrap_pyfunction!(rho, m)?)?;
    m.add_function(wrap_pyfunction!(lambda_threshold, m)?)?;
    m.add_function(wrap_pyfunction!(decay_constants, m)?)?;
    m.add_function(wrap_pyfunction!(generator_bound, m)?)?;
    m.add_function(wrap_pyfunction!(khasminskii_bound, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(coupled_log_separation, m)?)?;
    m.add_function(wrap_pyfunction!(decay_curve, m)?)?;
    m.add_function(wrap_pyfunction!(verify_decay, m)?)?;
    m.add_function(wrap_pyfunction!(local_time_moments, m)?)?;
    m.add_function(wrap_pyfunction!(exp_local_time_moment, m)?)?;
    m.add_function(wrap_pyfunction!(weighted_flow_moment, m)?)?;
    m.add_function(wrap_pyfunction!(gateaux_consistency, m)?)?;
    m.add_function(wrap_pyfunction!(pullback_sample, m)?)?;
    m.add_function(wrap_pyfunction!(pullback_slope, m)?)?;
    m.add_function(wrap_pyfunction!(stationarity_test, m)?)?;
    m.add_function(wrap_pyfunction!(second_moment_curve, m)?)?;
    m.add_function(wrap_pyfunction!(uniqueness_coupling, m)?)?;
    Ok(())
}
