//! Pullback construction of the stationary solution over a two-sided Wiener
//! process, and the checks built on it.
//!
//! `φ_{s,t}(x)` denotes the solution started at time `s` from `x` and read
//! at time `t`. All paths of one realization use the same lattice of
//! increments, so `φ_{s',t}(0) = φ_{s,t}(φ_{s',s}(0))` holds exactly and the
//! difference between two pullback depths is propagated as a coupled pair.

use rayon::prelude::*;
use serde::Serialize;

use crate::constants::{decay_constants, generator_bound, DecayConstants, GeneratorBound};
use crate::error::{Error, Result};
use crate::linalg::norm;
use crate::model::HyperplaneDriftModel;
use crate::montecarlo::{grid_steps, Numerics, PathNoise};
use crate::noise::{cell_index, TwoSidedNoise};
use crate::paths::{Engine, SeparationMode};
use crate::stats::{
    ks_normal, ks_two_sample, least_squares_slope, BoundCheck, KsResult, LogMean, MCEstimate,
};

/// Default significance of the stationarity tests, before the Bonferroni
/// split over coordinates.
pub const STATIONARITY_ALPHA: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PullbackRun {
    pub t_eval: f64,
    /// Strictly decreasing start times.
    pub s_list: Vec<f64>,
    /// `φ_{s_j, t_eval}(0)`.
    pub endpoints: Vec<Vec<f64>>,
    /// `|φ_{s_{j+1}, t}(0) − φ_{s_j, t}(0)|`; may underflow, see `ln_diffs`.
    pub diffs: Vec<f64>,
    pub ln_diffs: Vec<f64>,
    pub seed: u64,
    pub stream_id: u64,
}

fn check_scalars(dt: f64, eps: f64) -> Result<()> {
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(Error::domain(format!("dt must be positive, got {dt}")));
    }
    if !(eps > 0.0) || !eps.is_finite() {
        return Err(Error::domain(format!("eps must be positive, got {eps}")));
    }
    Ok(())
}

/// Advances `eng` over lattice cells `k_from..k_to`.
fn drive(eng: &mut Engine<'_>, noise: &TwoSidedNoise, k_from: i64, k_to: i64) -> Result<()> {
    let segments = if k_from < 0 && k_to > 0 {
        vec![(k_from, 0), (0, k_to)]
    } else {
        vec![(k_from, k_to)]
    };
    for (a, b) in segments {
        let w = noise.window(a, b)?;
        for n in 0..w.grid.n_steps {
            eng.step(w.row(n))?;
        }
    }
    Ok(())
}

/// Endpoints `φ_{s_j, t_eval}(0)` and successive differences on one
/// two-sided realization (stream `stream_id` of `numerics.seed`).
pub fn pullback_sample(
    model: &HyperplaneDriftModel,
    t_eval: f64,
    s_list: &[f64],
    numerics: &Numerics,
    stream_id: u64,
) -> Result<PullbackRun> {
    let (dt, eps) = (numerics.dt, numerics.epsilon());
    check_scalars(dt, eps)?;
    if s_list.is_empty() {
        return Err(Error::domain("s_list must be nonempty"));
    }
    if s_list.windows(2).any(|p| p[1] >= p[0]) || s_list[0] > t_eval {
        return Err(Error::domain(
            "start times must be strictly decreasing and not after t_eval",
        ));
    }
    let k_t = cell_index(t_eval, dt)?;
    let ks: Vec<i64> = s_list
        .iter()
        .map(|&s| cell_index(s, dt))
        .collect::<Result<_>>()?;
    let mut noise = TwoSidedNoise::new(model.noise_dim(), dt, numerics.seed, stream_id)?;
    noise.ensure(*ks.last().expect("nonempty"), k_t);

    let d = model.dim();
    let origin = vec![0.0; d];
    let mut endpoints = Vec::with_capacity(ks.len());
    let mut ln_diffs = Vec::with_capacity(ks.len() - 1);
    let mut first = Engine::new(model, &origin, dt, eps)?;
    drive(&mut first, &noise, ks[0], k_t)?;
    endpoints.push(first.x.clone());
    for j in 0..ks.len() - 1 {
        let mut z = Engine::new(model, &origin, dt, eps)?;
        drive(&mut z, &noise, ks[j + 1], ks[j])?;
        let mut pair = Engine::new(model, &origin, dt, eps)?.with_separation(
            &z.x,
            1.0,
            SeparationMode::Hybrid,
        );
        drive(&mut pair, &noise, ks[j], k_t)?;
        ln_diffs.push(pair.ln_separation());
        let sep = pair.sep.as_ref().expect("separation is tracked");
        let mut next = vec![0.0; d];
        sep.delta.write_value(&mut next);
        for (n, b) in next.iter_mut().zip(&pair.x) {
            *n += b;
        }
        endpoints.push(next);
    }
    Ok(PullbackRun {
        t_eval,
        s_list: s_list.to_vec(),
        endpoints,
        diffs: ln_diffs.iter().map(|l| l.exp()).collect(),
        ln_diffs,
        seed: numerics.seed,
        stream_id,
    })
}

/// `numerics.n_paths` independent realizations (streams `0..n_paths`).
pub fn pullback_ensemble(
    model: &HyperplaneDriftModel,
    t_eval: f64,
    s_list: &[f64],
    numerics: &Numerics,
) -> Result<Vec<PullbackRun>> {
    numerics.check()?;
    (0..numerics.n_paths as u64)
        .into_par_iter()
        .map(|r| pullback_sample(model, t_eval, s_list, numerics, r))
        .collect()
}

/// `C3 = C1 (K1_gen/K2_gen)^{1/2}`.
pub fn cauchy_constant(constants: &DecayConstants, generator: &GeneratorBound) -> f64 {
    constants.c1 * generator.second_moment_cap().sqrt()
}

/// Ensemble-mean `diff_j` against `C3 e^{C2 (s_j − t)}`, compared after
/// multiplying both sides by `e^{C2 (t − s_j)}`.
pub fn cauchy_rate_check(
    runs: &[PullbackRun],
    constants: &DecayConstants,
    generator: &GeneratorBound,
    allowance: f64,
) -> Result<Vec<BoundCheck>> {
    let first = runs
        .first()
        .ok_or_else(|| Error::domain("no pullback runs"))?;
    let c3 = cauchy_constant(constants, generator);
    (0..first.ln_diffs.len())
        .map(|j| {
            let logs: Vec<f64> = runs.iter().map(|r| r.ln_diffs[j]).collect();
            let depth = first.t_eval - first.s_list[j];
            let est = MCEstimate::from_log_samples(&logs, constants.c2 * depth, first.seed)?;
            Ok(BoundCheck::new(
                "cauchy_normalized",
                first.s_list[j],
                est,
                c3,
                allowance,
            ))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PullbackDecay {
    /// `t_eval − s_j`.
    pub depths: Vec<f64>,
    pub ln_mean_diffs: Vec<f64>,
    /// Least-squares slope of `ln_mean_diffs` against `depths`.
    pub slope: f64,
}

pub fn pullback_decay(runs: &[PullbackRun]) -> Result<PullbackDecay> {
    let first = runs
        .first()
        .ok_or_else(|| Error::domain("no pullback runs"))?;
    let n = first.ln_diffs.len();
    let depths: Vec<f64> = (0..n).map(|j| first.t_eval - first.s_list[j]).collect();
    let ln_mean_diffs: Vec<f64> = (0..n)
        .map(|j| {
            let logs: Vec<f64> = runs.iter().map(|r| r.ln_diffs[j]).collect();
            Ok(LogMean::new(&logs)?.ln_mean())
        })
        .collect::<Result<_>>()?;
    let slope = least_squares_slope(&depths, &ln_mean_diffs)?;
    Ok(PullbackDecay {
        depths,
        ln_mean_diffs,
        slope,
    })
}

/// `Ê|φ_{s,t}(x)|²` at absolute times `t ≥ s_start` against
/// `|x|² e^{−K2_gen (t−s)} + (K1_gen/K2_gen)(1 − e^{−K2_gen (t−s)})`, plus a
/// final check of the largest estimate against `max(|x|², K1_gen/K2_gen)`.
pub fn second_moment_curve(
    model: &HyperplaneDriftModel,
    s_start: f64,
    x: &[f64],
    times: &[f64],
    numerics: &Numerics,
) -> Result<Vec<BoundCheck>> {
    numerics.check()?;
    model.check_point(x)?;
    let elapsed: Vec<f64> = times
        .iter()
        .map(|&t| {
            if t < s_start {
                Err(Error::domain(format!(
                    "time {t} precedes the start {s_start}"
                )))
            } else {
                Ok(t - s_start)
            }
        })
        .collect::<Result<_>>()?;
    let record = grid_steps(&elapsed, numerics.dt)?;
    let gen = generator_bound(model.declared(), model.lambda())?;
    let (m, dt, eps) = (model.noise_dim(), numerics.dt, numerics.epsilon());
    let rows: Vec<Vec<f64>> = (0..numerics.n_paths as u64)
        .into_par_iter()
        .map(|path| {
            let mut eng = Engine::new(model, x, dt, eps)?;
            let mut noise = PathNoise::new(numerics.seed, path, m, dt);
            let last = record.iter().copied().max().unwrap_or(0);
            let mut out = vec![0.0; record.len()];
            for n in 0..=last {
                for (i, &r) in record.iter().enumerate() {
                    if r == n {
                        out[i] = eng.x.iter().map(|v| v * v).sum();
                    }
                }
                if n < last {
                    eng.step(noise.next_row())?;
                }
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    let x2 = norm(x).powi(2);
    let allowance = numerics.allowance();
    let mut checks = Vec::with_capacity(times.len() + 1);
    for (i, &t) in times.iter().enumerate() {
        let col: Vec<f64> = rows.iter().map(|r| r[i]).collect();
        let est = MCEstimate::from_samples(&col, numerics.seed)?;
        let bound = gen.second_moment_bound(x2, elapsed[i]);
        checks.push(BoundCheck::new("second_moment", t, est, bound, allowance));
    }
    if let Some(worst) = checks
        .iter()
        .max_by(|a, b| a.estimate.mean.total_cmp(&b.estimate.mean))
        .cloned()
    {
        checks.push(BoundCheck::new(
            "second_moment_sup",
            worst.t,
            worst.estimate,
            x2.max(gen.second_moment_cap()),
            allowance,
        ));
    }
    Ok(checks)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StationarityReport {
    pub t1: f64,
    pub t2: f64,
    pub depth: f64,
    pub required_depth: f64,
    pub n_realizations: usize,
    /// Two-sample KS of `ψ̂(t1)` against `ψ̂(t2)`, per coordinate.
    pub ks: Vec<KsResult>,
    pub alpha: f64,
    pub pass: bool,
    /// One-sample KS against the known Gaussian stationary law, per
    /// coordinate at `t1` then at `t2`; empty when the law is not known.
    pub normal_ks: Vec<KsResult>,
    pub normal_pass: Option<bool>,
}

/// Depth at which `C1 e^{−C2 depth} = 0.01`.
pub fn required_depth(constants: &DecayConstants) -> f64 {
    (100.0 * constants.c1).ln() / constants.c2
}

/// Compares the one-time marginals of the pullback limit at `t1` and `t2`.
///
/// Each realization gives `ψ̂(t_i) = φ_{t_i − depth, t_i}(0)` on its own
/// two-sided noise; both times use the same realizations, so `t1 = t2`
/// yields identical samples. Per-coordinate two-sample KS tests must all
/// exceed `alpha / d`.
pub fn stationarity_test(
    model: &HyperplaneDriftModel,
    t1: f64,
    t2: f64,
    depth: f64,
    numerics: &Numerics,
    alpha: f64,
) -> Result<StationarityReport> {
    numerics.check()?;
    let constants = decay_constants(model.dim(), model.lambda(), model.declared())?;
    let required = required_depth(&constants);
    if !(depth >= required) {
        return Err(Error::InsufficientDepth { depth, required });
    }
    let d = model.dim();
    let samples: Vec<(Vec<f64>, Vec<f64>)> = (0..numerics.n_paths as u64)
        .into_par_iter()
        .map(|r| {
            let a = pullback_sample(model, t1, &[t1 - depth], numerics, r)?;
            let b = pullback_sample(model, t2, &[t2 - depth], numerics, r)?;
            Ok((a.endpoints[0].clone(), b.endpoints[0].clone()))
        })
        .collect::<Result<_>>()?;
    let column = |which: usize, i: usize| -> Vec<f64> {
        samples
            .iter()
            .map(|(a, b)| if which == 0 { a[i] } else { b[i] })
            .collect()
    };
    let level = alpha / d as f64;
    let ks: Vec<KsResult> = (0..d)
        .map(|i| ks_two_sample(&column(0, i), &column(1, i)))
        .collect::<Result<_>>()?;
    let pass = ks.iter().all(|r| r.p_value >= level);
    let (normal_ks, normal_pass) = match model.coefficients().stationary_variance(model.lambda()) {
        Some(var) => {
            let sd = var.sqrt();
            let res: Vec<KsResult> = (0..2)
                .flat_map(|w| (0..d).map(move |i| (w, i)))
                .map(|(w, i)| ks_normal(&column(w, i), 0.0, sd))
                .collect::<Result<_>>()?;
            let ok = res.iter().all(|r| r.p_value >= alpha / (2 * d) as f64);
            (res, Some(ok))
        }
        None => (Vec::new(), None),
    };
    Ok(StationarityReport {
        t1,
        t2,
        depth,
        required_depth: required,
        n_realizations: numerics.n_paths,
        ks,
        alpha,
        pass,
        normal_ks,
        normal_pass,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CouplingReport {
    /// `Ê(|φ_{s,t}(x) − φ_{s,t}(y)| ∧ 1)`.
    pub estimate: MCEstimate,
    /// The same quantity times `e^{C2 (t−s)}/|x − y|` against
    /// `min(C1, e^{C2 (t−s)}/|x − y|)`.
    pub check: BoundCheck,
}

/// Two solutions started at `s = t_eval − depth` from `x` and `y`, driven by
/// the same two-sided noise.
pub fn uniqueness_coupling(
    model: &HyperplaneDriftModel,
    t_eval: f64,
    x: &[f64],
    y: &[f64],
    depth: f64,
    numerics: &Numerics,
) -> Result<CouplingReport> {
    numerics.check()?;
    model.check_point(x)?;
    model.check_point(y)?;
    let constants = decay_constants(model.dim(), model.lambda(), model.declared())?;
    let (dt, eps) = (numerics.dt, numerics.epsilon());
    let k_t = cell_index(t_eval, dt)?;
    let k_s = cell_index(t_eval - depth, dt)?;
    if k_s > k_t {
        return Err(Error::domain("depth must be non-negative"));
    }
    let gap: Vec<f64> = y.iter().zip(x).map(|(a, b)| a - b).collect();
    let logs: Vec<f64> = (0..numerics.n_paths as u64)
        .into_par_iter()
        .map(|r| {
            let mut noise = TwoSidedNoise::new(model.noise_dim(), dt, numerics.seed, r)?;
            noise.ensure(k_s, k_t);
            let mut eng =
                Engine::new(model, x, dt, eps)?.with_separation(&gap, 1.0, SeparationMode::Hybrid);
            drive(&mut eng, &noise, k_s, k_t)?;
            Ok(eng.ln_separation().min(0.0))
        })
        .collect::<Result<_>>()?;
    let estimate = MCEstimate::from_log_samples(&logs, 0.0, numerics.seed)?;
    let ln_gap = norm(&gap).ln();
    let elapsed = (k_t - k_s) as f64 * dt;
    let check = if ln_gap == f64::NEG_INFINITY {
        BoundCheck::new(
            "coupling_normalized",
            t_eval,
            estimate,
            0.0,
            numerics.allowance(),
        )
    } else {
        let shift = constants.c2 * elapsed - ln_gap;
        let normalized = MCEstimate::from_log_samples(&logs, shift, numerics.seed)?;
        let bound = constants.c1.min(shift.exp());
        BoundCheck::new(
            "coupling_normalized",
            t_eval,
            normalized,
            bound,
            numerics.allowance(),
        )
    };
    Ok(CouplingReport { estimate, check })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn ou(lambda: f64) -> HyperplaneDriftModel {
        HyperplaneDriftModel::ornstein_uhlenbeck(2, lambda).unwrap()
    }

    #[test]
    fn trivial_pullback() {
        let num = Numerics::new(1e-2, 2, 1);
        let run = pullback_sample(&ou(1.0), 1.0, &[1.0], &num, 0).unwrap();
        assert_eq!(run.endpoints, vec![vec![0.0, 0.0]]);
        assert!(run.diffs.is_empty());
    }

    #[test]
    fn pullback_rejects_bad_inputs() {
        let num = Numerics::new(1e-2, 2, 1);
        let m = ou(1.0);
        assert!(pullback_sample(&m, 1.0, &[0.0, 0.5], &num, 0).is_err());
        assert!(pullback_sample(&m, 1.0, &[2.0], &num, 0).is_err());
        assert!(matches!(
            pullback_sample(&m, 1.0, &[0.005], &num, 0),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn ou_pullback_matches_direct_integration_and_ratio() {
        // For OU each difference is the previous start's endpoint propagated
        // linearly: diff_j = (1 − λdt)^{(t − s_j)/dt} |φ_{s_{j+1}, s_j}(0)|.
        let m = ou(1.0);
        let num = Numerics::new(1e-2, 2, 4);
        let s_list = [0.0, -1.0, -2.0, -3.0];
        let run = pullback_sample(&m, 1.0, &s_list, &num, 3).unwrap();
        for (j, &s) in s_list.iter().enumerate() {
            let direct = pullback_sample(&m, 1.0, &[s], &num, 3).unwrap();
            for (a, b) in run.endpoints[j].iter().zip(&direct.endpoints[0]) {
                assert!((a - b).abs() < 1e-12, "{a} vs {b}");
            }
        }
        for j in 0..3 {
            let z = pullback_sample(&m, s_list[j], &[s_list[j + 1]], &num, 3).unwrap();
            let factor = (1.0f64 - 1e-2).powi(((1.0 - s_list[j]) / 1e-2).round() as i32);
            assert_relative_eq!(
                run.diffs[j],
                factor * norm(&z.endpoints[0]),
                max_relative = 1e-12
            );
        }
    }

    #[test]
    fn cauchy_checks_pass_for_ou() {
        let m = ou(1.0);
        let num = Numerics::new(1e-2, 200, 4);
        let s_list: Vec<f64> = (0..6).map(|j| 1.0 - j as f64).collect();
        let runs = pullback_ensemble(&m, 1.0, &s_list, &num).unwrap();
        let k = decay_constants(2, 1.0, m.declared()).unwrap();
        let g = generator_bound(m.declared(), 1.0).unwrap();
        assert_relative_eq!(cauchy_constant(&k, &g), 2f64.sqrt() * 2f64.sqrt());
        let checks = cauchy_rate_check(&runs, &k, &g, num.allowance()).unwrap();
        assert_eq!(checks.len(), 5);
        assert!(checks.iter().all(|c| c.pass), "{checks:?}");
        let decay = pullback_decay(&runs).unwrap();
        assert!((decay.slope + 1.0).abs() < 0.1, "{decay:?}");
    }

    #[test]
    fn second_moment_of_ou_is_below_the_cap() {
        let m = ou(1.0);
        let num = Numerics::new(1e-2, 2000, 8);
        let checks = second_moment_curve(&m, 0.0, &[0.0, 0.0], &[0.0, 1.0, 5.0], &num).unwrap();
        assert_eq!(checks[0].estimate.mean, 0.0);
        assert!(checks.iter().all(|c| c.pass), "{checks:?}");
        // Stationary value d/(2λ) = 1, well below K1/K2 = 2.
        assert!((checks[2].estimate.mean - 1.0).abs() < 0.1);
    }

    #[test]
    fn identical_times_give_zero_statistic() {
        let m = ou(1.0);
        let num = Numerics::new(1e-2, 50, 1);
        let r = stationarity_test(&m, 0.0, 0.0, 6.0, &num, STATIONARITY_ALPHA).unwrap();
        assert!(r.ks.iter().all(|k| k.statistic == 0.0));
        assert!(r.pass);
        assert_eq!(r.normal_ks.len(), 4);
    }

    #[test]
    fn shallow_depth_is_rejected_with_requirement() {
        let m = ou(1.0);
        let num = Numerics::new(1e-2, 50, 1);
        match stationarity_test(&m, 0.0, 1.0, 1.0, &num, STATIONARITY_ALPHA) {
            Err(Error::InsufficientDepth { required, .. }) => {
                assert_relative_eq!(required, (100.0 * 2f64.sqrt()).ln(), max_relative = 1e-9);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn coupling_of_ou_is_exact() {
        let m = ou(1.0);
        let num = Numerics::new(1e-2, 4, 1);
        let r = uniqueness_coupling(&m, 0.0, &[0.0, 0.0], &[0.5, 0.0], 2.0, &num).unwrap();
        assert_relative_eq!(
            r.estimate.mean,
            0.5 * (1.0f64 - 1e-2).powi(200),
            max_relative = 1e-12
        );
        assert!(r.check.pass);
        let same = uniqueness_coupling(&m, 0.0, &[0.1, 0.0], &[0.1, 0.0], 2.0, &num).unwrap();
        assert_eq!(same.estimate.mean, 0.0);
        assert!(same.check.pass);
    }
}
