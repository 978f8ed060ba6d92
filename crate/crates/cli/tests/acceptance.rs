//! Acceptance suite: one line per criterion, nonzero exit if any fails.

use std::collections::BTreeMap;
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use hypersde::montecarlo::decay_curve;
use hypersde::stationary::{
    cauchy_rate_check, pullback_decay, pullback_ensemble, STATIONARITY_ALPHA,
};
use hypersde::*;
use rayon::prelude::*;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

type Criterion = fn() -> Result<Outcome>;

fn bang_bang(lambda: f64) -> HyperplaneDriftModel {
    HyperplaneDriftModel::bang_bang(2, lambda, 0.5).unwrap()
}

fn twice_threshold() -> f64 {
    let m = bang_bang(1.0);
    2.0 * lambda_threshold(m.declared()).unwrap().lambda_threshold
}

fn checks_line(checks: &[BoundCheck]) -> String {
    checks
        .iter()
        .map(|c| {
            format!(
                "{}@{}: {:.4e} <= {:.4e}",
                c.quantity, c.t, c.estimate.mean, c.bound
            )
        })
        .collect::<Vec<_>>()
        .join("; ")
}

fn c1_ou_exactness() -> Result<Outcome> {
    let m = HyperplaneDriftModel::ornstein_uhlenbeck(2, 1.0)?;
    let num = Numerics::new(1e-4, 100, 1);
    let pts = decay_curve(&m, &[0.0, 0.0], &[0.6, -0.8], 1.0, &[1.0], &num)?;
    let est = pts[0].estimate;
    let oracle = (1.0f64 - 1e-4).powi(10_000);
    let exact = (est.mean - oracle).abs() <= 1e-12 * oracle && est.std_error <= 1e-12 * oracle;
    let near_e = (est.mean * std::f64::consts::E - 1.0).abs() < 1e-3;
    Ok(outcome(
        exact && near_e,
        format!(
            "mean {:.15} oracle {oracle:.15} se {:.1e}",
            est.mean, est.std_error
        ),
    ))
}

fn c2_brownian_local_time() -> Result<Outcome> {
    let m = HyperplaneDriftModel::ornstein_uhlenbeck(1, 1e-8)?;
    let grid = TimeGrid::new(0.0, 1.0, 1e-4)?;
    let eps = 1e-2;
    let lt: Vec<f64> = (0..10_000u64)
        .into_par_iter()
        .map(|p| {
            let w = wiener(1, grid, 2, p)?;
            Ok(euler_path(&m, &[0.0], &w, eps)?.total_local_time())
        })
        .collect::<Result<_>>()?;
    let mean = MCEstimate::from_samples(&lt, 2)?.mean;
    let sq: Vec<f64> = lt.iter().map(|l| l * l).collect();
    let second = MCEstimate::from_samples(&sq, 2)?.mean;
    let oracle = (2.0 / std::f64::consts::PI).sqrt();
    let pass = (mean / oracle - 1.0).abs() < 0.05 && (second - 1.0).abs() < 0.10;
    Ok(outcome(
        pass,
        format!("E L = {mean:.4} (oracle {oracle:.4}), E L^2 = {second:.4} (oracle 1)"),
    ))
}

fn local_time_report() -> Result<montecarlo::LocalTimeReport> {
    let m = bang_bang(1.0);
    let num = Numerics::new(1e-4, 4000, 3);
    let grid = vec![vec![0.0, 0.0], vec![0.0, 0.25], vec![1.0, -0.5]];
    local_time_moments(
        &m,
        &[0.0, 0.0],
        &[0.5, 1.0, 2.0],
        &[1, 2, 3],
        &num,
        Some(&grid),
    )
}

fn c3_local_time_mean_bound() -> Result<Outcome> {
    let r = local_time_report()?;
    let checks: Vec<BoundCheck> = r
        .checks
        .into_iter()
        .filter(|c| c.quantity == "local_time_mean")
        .collect();
    Ok(outcome(
        checks.len() == 3 && all_pass(&checks),
        checks_line(&checks),
    ))
}

fn c4_local_time_moments() -> Result<Outcome> {
    let r = local_time_report()?;
    let checks: Vec<BoundCheck> = r
        .checks
        .into_iter()
        .filter(|c| c.quantity.starts_with("local_time_moment_"))
        .collect();
    Ok(outcome(
        checks.len() == 6 && all_pass(&checks),
        checks_line(&checks),
    ))
}

fn c5_exponential_moment() -> Result<Outcome> {
    let m = bang_bang(twice_threshold());
    let k = decay_constants(2, m.lambda(), m.declared())?;
    let num = Numerics::new(1e-5, 100_000, 5);
    let checks = [1.0, 5.0]
        .iter()
        .map(|mult| {
            let t = num.dt * (mult * k.t0 / num.dt).floor();
            exp_local_time_moment(&m, &[0.0, 0.0], t, &num, Some(k.t0))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(outcome(all_pass(&checks), checks_line(&checks)))
}

fn c6_weighted_flow() -> Result<Outcome> {
    let bb = weighted_flow_moment(
        &bang_bang(1.0),
        &[0.0, 0.0],
        1.0,
        20,
        &Numerics::new(1e-4, 100_000, 6),
    )?;
    let ou = weighted_flow_moment(
        &HyperplaneDriftModel::ornstein_uhlenbeck(2, 1.0)?,
        &[0.0, 0.0],
        1.0,
        20,
        &Numerics::new(1e-4, 1000, 6),
    )?;
    let ou_end = ou.curve.last().expect("records").1.mean;
    let pass = bb.check.pass && (ou_end / 2.0 - 1.0).abs() < 0.01;
    let bb_end = bb.curve.last().expect("records").1.mean;
    Ok(outcome(
        pass,
        format!("BangBang sup {:.4} at t={} (t=1: {bb_end:.4}) <= d = 2 + allowance; OU at t=1: {ou_end:.6}", bb.check.estimate.mean, bb.check.t),
    ))
}

fn c7_decay() -> Result<Outcome> {
    let m = bang_bang(twice_threshold());
    let num = Numerics::new(1e-4, 100_000, 7);
    let v = verify_decay(
        &m,
        &[0.0, 0.0],
        &[0.0, 1.0],
        &[0.5, 1.0, 2.0, 4.0],
        &num,
        0.0,
    )?;
    Ok(outcome(
        v.pass,
        format!(
            "C1 = {:.4}, C2 = {:.3}, fitted rate {:.3}; {}",
            v.constants.c1,
            v.constants.c2,
            v.fitted_rate.unwrap_or(f64::NAN),
            checks_line(&v.checks)
        ),
    ))
}

fn c8_gateaux() -> Result<Outcome> {
    let num = Numerics::new(1e-5, 1000, 8);
    let g = gateaux_consistency(
        &bang_bang(1.0),
        &[0.0, 0.0],
        &[0.0, 1.0],
        0.1,
        &[1e-1, 1e-2, 1e-3],
        &num,
    )?;
    let errs: Vec<String> = g
        .l1_error
        .iter()
        .map(|e| format!("{:.4}", e.mean))
        .collect();
    Ok(outcome(
        g.monotone,
        format!("L1 errors {errs:?} for eps 1e-1, 1e-2, 1e-3 at dt = 1e-5"),
    ))
}

fn c9_stationary() -> Result<Outcome> {
    let m = bang_bang(twice_threshold());
    let k = decay_constants(2, m.lambda(), m.declared())?;
    let g = generator_bound(m.declared(), m.lambda())?;
    let num = Numerics::new(1e-4, 500, 9);
    let s_list: Vec<f64> = (1..=9).map(|j| -(j as f64)).collect();
    let runs = pullback_ensemble(&m, 0.0, &s_list, &num)?;
    let dec = pullback_decay(&runs)?;
    let cauchy = cauchy_rate_check(&runs, &k, &g, num.allowance())?;
    let slope_ok = dec.slope <= -k.c2 + 0.1;

    let st_bb = stationarity_test(
        &m,
        0.0,
        1.0,
        1.0,
        &Numerics::new(1e-4, 1000, 9),
        STATIONARITY_ALPHA,
    )?;
    let ou = HyperplaneDriftModel::ornstein_uhlenbeck(2, 1.0)?;
    let st_ou = stationarity_test(
        &ou,
        0.0,
        1.0,
        8.0,
        &Numerics::new(1e-3, 1000, 9),
        STATIONARITY_ALPHA,
    )?;
    let min_p = |r: &[KsResult]| r.iter().map(|k| k.p_value).fold(1.0, f64::min);
    let pass = slope_ok
        && all_pass(&cauchy)
        && st_bb.pass
        && st_ou.pass
        && st_ou.normal_pass == Some(true);
    Ok(outcome(
        pass,
        format!(
            "slope {:.2} vs -C2 + 0.1 = {:.2}; cauchy checks {}; KS min p BangBang {:.3}, OU {:.3}, OU vs N(0, 1/2) {:.3}",
            dec.slope,
            -k.c2 + 0.1,
            if all_pass(&cauchy) { "pass" } else { "FAIL" },
            min_p(&st_bb.ks),
            min_p(&st_ou.ks),
            min_p(&st_ou.normal_ks)
        ),
    ))
}

fn c10_second_moment() -> Result<Outcome> {
    let x = [1.0, -1.0];
    let times: Vec<f64> = (1..=10).map(|t| t as f64).collect();
    let num = Numerics::new(1e-3, 2000, 10);
    let mut details = Vec::new();
    let mut pass = true;
    for m in [
        bang_bang(1.0),
        HyperplaneDriftModel::smooth_lipschitz(2, 1.0)?,
    ] {
        let checks = second_moment_curve(&m, 0.0, &x, &times, &num)?;
        let g = generator_bound(m.declared(), m.lambda())?;
        let lam = m.lambda();
        let mut worst = f64::INFINITY;
        for c in checks.iter().filter(|c| c.quantity == "second_moment") {
            let bound = 2.0 * (-lam * c.t).exp() + g.k1_gen / lam + num.allowance();
            worst = worst.min(bound - c.estimate.upper());
        }
        pass &= all_pass(&checks) && worst > 0.0;
        details.push(format!("{}: min slack {worst:.3}", m.name()));
    }
    Ok(outcome(pass, details.join(", ")))
}

fn run_cli(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_hypersde"))
        .args(args)
        .env_remove("HYPERSDE_SEED")
        .output()
        .expect("binary runs")
}

fn dir_bytes(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (
                e.file_name().into_string().unwrap(),
                std::fs::read(e.path()).unwrap(),
            )
        })
        .collect()
}

fn c11_determinism() -> Result<Outcome> {
    let tmp = tempfile::tempdir().unwrap();
    let configs = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let commands = [
        "constants",
        "simulate",
        "decay",
        "localtime",
        "flow",
        "stationary",
        "validate",
    ];
    let mut mismatched = Vec::new();
    for model in ["ou", "bang_bang", "smooth_lipschitz"] {
        let cfg = configs.join(format!("{model}.json"));
        for command in commands {
            let runs: Vec<BTreeMap<String, Vec<u8>>> = ["1", "1", "3"]
                .iter()
                .enumerate()
                .map(|(i, w)| {
                    let out = tmp.path().join(format!("{model}-{command}-{i}"));
                    let status = run_cli(&[
                        command,
                        "--config",
                        cfg.to_str().unwrap(),
                        "--out",
                        out.to_str().unwrap(),
                        "--quiet",
                        "--workers",
                        w,
                        "--paths",
                        "64",
                        "--t-end",
                        "0.25",
                        "--realizations",
                        "32",
                    ])
                    .status
                    .code();
                    if !matches!(status, Some(0) | Some(1)) {
                        return BTreeMap::new();
                    }
                    dir_bytes(&out)
                })
                .collect();
            if runs[0].len() < 3 || runs[0] != runs[1] || runs[0] != runs[2] {
                mismatched.push(format!("{model}/{command}"));
            }
        }
    }
    // The library gives the same answer inside pools of different sizes.
    let m = bang_bang(twice_threshold());
    let num = Numerics::new(1e-4, 64, 11);
    let curve = |threads: usize| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| decay_curve(&m, &[0.0, 0.0], &[0.0, 1.0], 1.0, &[0.5], &num))
    };
    let lib_same = curve(1)? == curve(4)?;
    Ok(outcome(
        mismatched.is_empty() && lib_same,
        format!(
            "21 command/config pairs rerun on 1, 1 and 3 workers; mismatches {mismatched:?}; library pool sizes agree: {lib_same}"
        ),
    ))
}

fn main() {
    let criteria: [(&str, Criterion); 11] = [
        ("OU exactness", c1_ou_exactness),
        ("Brownian local time law", c2_brownian_local_time),
        ("local time mean bound", c3_local_time_mean_bound),
        ("local time higher moments", c4_local_time_moments),
        ("exponential local time moment", c5_exponential_moment),
        ("weighted derivative flow", c6_weighted_flow),
        ("decay at twice the threshold", c7_decay),
        ("Gateaux consistency", c8_gateaux),
        ("pullback stationary solution", c9_stationary),
        ("second moment bound", c10_second_moment),
        ("determinism", c11_determinism),
    ];
    let mut failures = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let (pass, detail) = match f() {
            Ok(o) => (o.pass, o.detail),
            Err(e) => (false, format!("error: {e}")),
        };
        failures += usize::from(!pass);
        println!(
            "criterion {:>2} {} [{}] {:.1}s: {}",
            i + 1,
            if pass { "PASS" } else { "FAIL" },
            name,
            start.elapsed().as_secs_f64(),
            detail
        );
    }
    println!(
        "acceptance: {} of {} criteria passed",
        criteria.len() - failures,
        criteria.len()
    );
    if failures > 0 {
        std::process::exit(1);
    }
}
