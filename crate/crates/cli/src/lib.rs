//! Configuration-driven front end for the `hypersde` library.

pub mod config;
mod error;
pub mod report;

use std::path::PathBuf;

use hypersde::stationary::{cauchy_constant, STATIONARITY_ALPHA};
use hypersde::{
    decay_constants, derivative_flow, euler_path, exp_local_time_moment, gateaux_consistency,
    generator_bound, local_time_moments, occupation_local_time, pullback_decay, pullback_ensemble,
    second_moment_curve, stationarity_test, validate_model, verify_decay, weighted_flow_moment,
    wiener, SamplingBox, TimeGrid,
};
use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};

pub use config::RunConfig;
pub use error::CliError;
use report::{csv_bytes, fmt_f64, json_bytes, key_values, report_csv, Outputs, ReportRow};

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Command {
    Constants,
    Simulate,
    Decay,
    Localtime,
    Flow,
    Stationary,
    Validate,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Constants => "constants",
            Command::Simulate => "simulate",
            Command::Decay => "decay",
            Command::Localtime => "localtime",
            Command::Flow => "flow",
            Command::Stationary => "stationary",
            Command::Validate => "validate",
        }
    }
}

/// Command-line values that replace the corresponding config entries.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub t_end: Option<f64>,
    pub dt: Option<f64>,
    pub eps: Option<f64>,
    pub seed: Option<u64>,
    pub paths: Option<usize>,
    pub out: Option<PathBuf>,
    pub depth: Option<f64>,
    pub t_eval: Option<f64>,
    pub realizations: Option<usize>,
}

impl Overrides {
    pub fn apply(&self, cfg: &mut RunConfig) {
        let n = &mut cfg.numerics;
        n.t_end = self.t_end.unwrap_or(n.t_end);
        n.dt = self.dt.unwrap_or(n.dt);
        n.eps = self.eps.or(n.eps);
        n.seed = self.seed.unwrap_or(n.seed);
        n.n_paths = self.paths.unwrap_or(n.n_paths);
        let e = &mut cfg.experiment;
        e.depth = self.depth.or(e.depth);
        e.t_eval = self.t_eval.or(e.t_eval);
        e.realizations = self.realizations.or(e.realizations);
        if let Some(out) = &self.out {
            cfg.output.directory = out.clone();
        }
    }
}

/// Per-command seed derived from the master seed.
pub fn sub_seed(master: u64, command: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(master.to_le_bytes());
    h.update(command.as_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
}

#[derive(Debug)]
pub struct Outcome {
    pub pass: bool,
    pub files: Vec<PathBuf>,
}

struct Produced {
    outputs: Outputs,
    pass: bool,
}

impl Produced {
    fn new() -> Self {
        Self {
            outputs: Outputs::default(),
            pass: true,
        }
    }

    fn report(
        &mut self,
        cfg: &RunConfig,
        name: &str,
        rows: &[ReportRow],
        full: &impl Serialize,
    ) -> Result<(), CliError> {
        self.pass &= rows.iter().all(|r| r.pass);
        for f in &cfg.output.formats {
            match f {
                config::Format::Csv => self.outputs.add(format!("{name}.csv"), report_csv(rows)?),
                config::Format::Json => self.outputs.add(format!("{name}.json"), json_bytes(full)),
            }
        }
        Ok(())
    }
}

/// Loads, validates and runs `command`, writing every output under the
/// configured directory.
pub fn run(
    command: Command,
    mut cfg: RunConfig,
    overrides: &Overrides,
    quiet: bool,
) -> Result<Outcome, CliError> {
    overrides.apply(&mut cfg);
    cfg.validate()?;
    let name = command.name();
    let master = cfg.numerics.seed;
    let seed = sub_seed(master, name);
    if !quiet {
        eprintln!(
            "hypersde {name}: model {} (d = {}, lambda = {})",
            cfg.model.name, cfg.model.d, cfg.model.lambda
        );
    }
    let mut out = Produced::new();
    match command {
        Command::Constants => constants(&cfg, &mut out)?,
        Command::Simulate => simulate(&cfg, seed, &mut out)?,
        Command::Decay => decay(&cfg, seed, &mut out)?,
        Command::Localtime => localtime(&cfg, seed, &mut out)?,
        Command::Flow => flow(&cfg, seed, &mut out)?,
        Command::Stationary => stationary(&cfg, seed, &mut out)?,
        Command::Validate => validate(&cfg, seed, &mut out)?,
    }
    // The echoed config names outputs relative to their own directory, so
    // runs that differ only in `--out` produce identical files.
    let mut echoed = cfg.clone();
    echoed.output.directory = PathBuf::from(".");
    let config_json = echoed.to_json();
    out.outputs
        .add("config.json", format!("{config_json}\n").into_bytes());
    let pass = out.pass;
    let files = out.outputs.write(
        &cfg.output.directory,
        name,
        &config_json,
        master,
        seed,
        pass,
    )?;
    if !quiet {
        eprintln!(
            "hypersde {name}: {} files in {}, checks {}",
            files.len(),
            cfg.output.directory.display(),
            if pass { "passed" } else { "FAILED" }
        );
    }
    Ok(Outcome { pass, files })
}

fn constants(cfg: &RunConfig, out: &mut Produced) -> Result<(), CliError> {
    let model = cfg.build_model()?;
    let k = decay_constants(model.dim(), model.lambda(), model.declared())?;
    let g = generator_bound(model.declared(), model.lambda())?;
    let pairs = [
        ("lambda", k.lambda),
        ("K", k.k),
        ("K1", k.k1),
        ("K2", k.k2),
        ("K3", k.k3),
        ("delta", k.delta),
        ("Lambda", k.lambda_threshold),
        ("t0", k.t0),
        ("rho_at_t0", k.rho_at_t0),
        ("C1", k.c1),
        ("C2", k.c2),
        ("C2_block", k.c2_block),
        ("K1_gen", g.k1_gen),
        ("K2_gen", g.k2_gen),
    ];
    #[derive(Serialize)]
    struct Doc {
        decay: hypersde::DecayConstants,
        generator: hypersde::GeneratorBound,
    }
    for f in &cfg.output.formats {
        match f {
            config::Format::Csv => out.outputs.add("constants.txt", key_values(&pairs)),
            config::Format::Json => out.outputs.add(
                "constants.json",
                json_bytes(&Doc {
                    decay: k,
                    generator: g,
                }),
            ),
        }
    }
    Ok(())
}

fn simulate(cfg: &RunConfig, seed: u64, out: &mut Produced) -> Result<(), CliError> {
    let model = cfg.build_model()?;
    let numerics = cfg.numerics(seed);
    let grid = TimeGrid::new(0.0, cfg.numerics.t_end, numerics.dt)?;
    let x0 = cfg.start_point();
    let stride = cfg.experiment.stride.unwrap_or(1).max(1);
    let with_flow = cfg.experiment.record_flow.unwrap_or(false);
    let (d, eps) = (model.dim(), numerics.epsilon());
    let mut keep: Vec<usize> = (0..=grid.n_steps).step_by(stride).collect();
    if keep.last() != Some(&grid.n_steps) {
        keep.push(grid.n_steps);
    }
    let blocks: Vec<Vec<Vec<String>>> = (0..numerics.n_paths as u64)
        .into_par_iter()
        .map(|path| {
            let w = wiener(model.noise_dim(), grid, seed, path)?;
            let traj = euler_path(&model, &x0, &w, eps)?;
            let flow = if with_flow {
                Some(derivative_flow(&model, &traj, &w)?)
            } else {
                None
            };
            let lt = occupation_local_time(&traj);
            Ok(keep
                .iter()
                .map(|&n| {
                    let mut row = vec![path.to_string(), fmt_f64(grid.time(n))];
                    row.extend(traj.state(n).iter().map(|v| fmt_f64(*v)));
                    row.push(fmt_f64(lt[n]));
                    if let Some(f) = &flow {
                        row.extend(f.matrix(n).iter().map(|v| fmt_f64(*v)));
                    }
                    row
                })
                .collect())
        })
        .collect::<hypersde::Result<_>>()?;
    let mut header = vec!["path".to_string(), "t".to_string()];
    header.extend((1..=d).map(|i| format!("x_{i}")));
    header.push("L".into());
    if with_flow {
        for i in 1..=d {
            header.extend((1..=d).map(|j| format!("Y_{i}{j}")));
        }
    }
    let rows: Vec<Vec<String>> = blocks.into_iter().flatten().collect();
    out.outputs.add("simulate.csv", csv_bytes(&header, &rows)?);
    Ok(())
}

fn decay(cfg: &RunConfig, seed: u64, out: &mut Produced) -> Result<(), CliError> {
    let model = cfg.build_model()?;
    let numerics = cfg.numerics(seed);
    let x = cfg.start_point();
    let y = cfg.experiment.y.clone().unwrap_or_else(|| {
        let mut y = x.clone();
        *y.last_mut().expect("d > 0") += 1.0;
        y
    });
    let tol = cfg.experiment.rate_tolerance.unwrap_or(0.0);
    let v = verify_decay(&model, &x, &y, &cfg.times(), &numerics, tol)?;
    let mut rows: Vec<ReportRow> = v.checks.iter().map(ReportRow::from).collect();
    if let Some(rate) = v.fitted_rate {
        rows.push(ReportRow {
            quantity: "decay_rate".into(),
            t: v.points.last().map_or(0.0, |p| p.t),
            estimate: rate,
            std_error: 0.0,
            bound: v.constants.c2,
            slack: rate - (v.constants.c2 - tol),
            pass: v.rate_pass,
        });
    }
    out.report(cfg, "decay", &rows, &v)?;
    let header: Vec<String> = ["t", "estimate", "ln_estimate", "relative_se"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let curve: Vec<Vec<String>> = v
        .points
        .iter()
        .map(|p| {
            vec![
                fmt_f64(p.t),
                fmt_f64(p.estimate.mean),
                fmt_f64(p.ln_estimate),
                fmt_f64(p.relative_se),
            ]
        })
        .collect();
    out.outputs
        .add("decay_curve.csv", csv_bytes(&header, &curve)?);
    Ok(())
}

fn localtime(cfg: &RunConfig, seed: u64, out: &mut Produced) -> Result<(), CliError> {
    let model = cfg.build_model()?;
    let numerics = cfg.numerics(seed);
    let x = cfg.start_point();
    let orders = cfg
        .experiment
        .orders
        .clone()
        .unwrap_or_else(|| vec![1, 2, 3]);
    let r = local_time_moments(
        &model,
        &x,
        &cfg.times(),
        &orders,
        &numerics,
        cfg.experiment.start_grid.as_deref(),
    )?;
    let mut checks = r.checks.clone();
    if cfg.experiment.exp_moment.unwrap_or(false) {
        let k = decay_constants(model.dim(), model.lambda(), model.declared())?;
        for mult in [1.0, 5.0] {
            let t = numerics.dt * (mult * k.t0 / numerics.dt).floor();
            checks.push(exp_local_time_moment(&model, &x, t, &numerics, Some(k.t0))?);
        }
    }
    let rows: Vec<ReportRow> = checks.iter().map(ReportRow::from).collect();
    #[derive(Serialize)]
    struct Doc<'a> {
        moments: &'a hypersde::montecarlo::LocalTimeReport,
        checks: &'a [hypersde::BoundCheck],
    }
    out.report(
        cfg,
        "localtime",
        &rows,
        &Doc {
            moments: &r,
            checks: &checks,
        },
    )
}

fn flow(cfg: &RunConfig, seed: u64, out: &mut Produced) -> Result<(), CliError> {
    let model = cfg.build_model()?;
    let numerics = cfg.numerics(seed);
    let x = cfg.start_point();
    let t = cfg.numerics.t_end;
    let n_records = cfg.experiment.n_records.unwrap_or(10);
    let w = weighted_flow_moment(&model, &x, t, n_records, &numerics)?;
    let mut rows = vec![ReportRow::from(&w.check)];
    let gateaux = match &cfg.experiment.fd_eps {
        Some(eps_list) => {
            let v = cfg.experiment.direction.clone().unwrap_or_else(|| {
                let mut v = vec![0.0; model.dim()];
                *v.last_mut().expect("d > 0") = 1.0;
                v
            });
            let fd_t = cfg.experiment.fd_t.unwrap_or(t);
            let g = gateaux_consistency(&model, &x, &v, fd_t, eps_list, &numerics)?;
            let mut prev = f64::INFINITY;
            for e in &g.l1_error {
                rows.push(ReportRow {
                    quantity: "gateaux_l1_error".into(),
                    t: g.t,
                    estimate: e.mean,
                    std_error: e.std_error,
                    bound: prev,
                    slack: prev - e.mean,
                    pass: e.mean < prev,
                });
                prev = e.mean;
            }
            Some(g)
        }
        None => None,
    };
    #[derive(Serialize)]
    struct Doc<'a> {
        weighted: &'a hypersde::montecarlo::WeightedFlowReport,
        gateaux: Option<hypersde::montecarlo::GateauxReport>,
    }
    out.report(
        cfg,
        "flow",
        &rows,
        &Doc {
            weighted: &w,
            gateaux,
        },
    )
}

fn stationary(cfg: &RunConfig, seed: u64, out: &mut Produced) -> Result<(), CliError> {
    let model = cfg.build_model()?;
    let e = &cfg.experiment;
    let mut numerics = cfg.numerics(seed);
    numerics.n_paths = e.realizations.unwrap_or(cfg.numerics.n_paths);
    let k = decay_constants(model.dim(), model.lambda(), model.declared())?;
    let g = generator_bound(model.declared(), model.lambda())?;
    let t_eval = e.t_eval.unwrap_or(0.0);
    let step = e.depth_step.unwrap_or(1.0);
    if !(step > 0.0) {
        return Err(CliError::Validation(
            "experiment.depth_step must be positive".into(),
        ));
    }
    let depth = e.depth.unwrap_or_else(|| {
        (hypersde::stationary::required_depth(&k) / step)
            .ceil()
            .max(1.0)
            * step
    });
    let n_starts = (depth / step).round() as usize;
    if n_starts == 0 {
        return Err(CliError::Validation(
            "depth must be at least one depth_step".into(),
        ));
    }
    let s_list: Vec<f64> = (1..=n_starts).map(|j| t_eval - j as f64 * step).collect();
    let report = stationarity_test(
        &model,
        t_eval,
        t_eval + e.t_shift.unwrap_or(1.0),
        depth,
        &numerics,
        e.alpha.unwrap_or(STATIONARITY_ALPHA),
    )?;
    let runs = pullback_ensemble(&model, t_eval, &s_list, &numerics)?;

    let mut rows: Vec<ReportRow> =
        hypersde::cauchy_rate_check(&runs, &k, &g, numerics.allowance())?
            .iter()
            .map(ReportRow::from)
            .collect();
    let moments = second_moment_curve(
        &model,
        0.0,
        &cfg.start_point(),
        &cfg.times(),
        &cfg.numerics(seed),
    )?;
    rows.extend(moments.iter().map(ReportRow::from));
    if s_list.len() >= 3 {
        let dec = pullback_decay(&runs)?;
        rows.push(ReportRow {
            quantity: "pullback_rate".into(),
            t: t_eval,
            estimate: -dec.slope,
            std_error: 0.0,
            bound: k.c2,
            slack: -dec.slope - k.c2,
            pass: -dec.slope >= k.c2,
        });
    }
    #[derive(Serialize)]
    struct Doc<'a> {
        c3: f64,
        checks: &'a [ReportRow],
        stationarity: &'a hypersde::StationarityReport,
    }
    let c3 = cauchy_constant(&k, &g);
    out.report(
        cfg,
        "stationary",
        &rows,
        &Doc {
            c3,
            checks: &rows,
            stationarity: &report,
        },
    )?;

    let d = model.dim();
    let mut header = vec!["realization".to_string(), "s".to_string()];
    header.extend((1..=d).map(|i| format!("x_{i}")));
    header.push("diff".into());
    let mut pull = Vec::new();
    for r in &runs {
        for (j, (s, x)) in r.s_list.iter().zip(&r.endpoints).enumerate() {
            let mut row = vec![r.stream_id.to_string(), fmt_f64(*s)];
            row.extend(x.iter().map(|v| fmt_f64(*v)));
            row.push(if j == 0 {
                fmt_f64(f64::NAN)
            } else {
                fmt_f64(r.diffs[j - 1])
            });
            pull.push(row);
        }
    }
    out.outputs.add("pullback.csv", csv_bytes(&header, &pull)?);

    let header: Vec<String> = [
        "test",
        "coordinate",
        "statistic",
        "p_value",
        "level",
        "pass",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    let level = report.alpha / d as f64;
    let mut ks_rows = Vec::new();
    for (i, r) in report.ks.iter().enumerate() {
        ks_rows.push(vec![
            "two_sample".into(),
            (i + 1).to_string(),
            fmt_f64(r.statistic),
            fmt_f64(r.p_value),
            fmt_f64(level),
            (r.p_value >= level).to_string(),
        ]);
    }
    let normal_level = report.alpha / (2 * d) as f64;
    for (i, r) in report.normal_ks.iter().enumerate() {
        let which = if i < d { "normal_t1" } else { "normal_t2" };
        ks_rows.push(vec![
            which.into(),
            (i % d + 1).to_string(),
            fmt_f64(r.statistic),
            fmt_f64(r.p_value),
            fmt_f64(normal_level),
            (r.p_value >= normal_level).to_string(),
        ]);
    }
    out.outputs
        .add("stationarity.csv", csv_bytes(&header, &ks_rows)?);
    out.pass &= report.pass && report.normal_pass.unwrap_or(true);
    Ok(())
}

fn validate(cfg: &RunConfig, seed: u64, out: &mut Produced) -> Result<(), CliError> {
    let model = cfg.build_model()?;
    let n = cfg.experiment.validation_samples.unwrap_or(10_000);
    let half_width = cfg
        .experiment
        .half_width
        .unwrap_or(SamplingBox::default().half_width);
    let region = SamplingBox { half_width };
    let r = validate_model(&model, n, region, seed)?;
    let gen = hypersde::constants::generator_check(&model, n, half_width, seed)?;
    let header: Vec<String> = [
        "condition",
        "quantity",
        "declared",
        "sampled",
        "direction",
        "pass",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    let mut rows: Vec<Vec<String>> = r
        .checks
        .iter()
        .map(|c| {
            vec![
                c.condition.to_string(),
                c.quantity.to_string(),
                fmt_f64(c.declared),
                fmt_f64(c.sampled),
                serde_json::to_value(c.direction)
                    .ok()
                    .and_then(|v| v.as_str().map(String::from))
                    .unwrap_or_default(),
                c.pass.to_string(),
            ]
        })
        .collect();
    rows.push(vec![
        "generator".into(),
        "generator_excess".into(),
        fmt_f64(0.0),
        fmt_f64(gen.max_excess),
        "at_most".into(),
        gen.pass.to_string(),
    ]);
    out.pass &= r.pass && gen.pass;
    for f in &cfg.output.formats {
        match f {
            config::Format::Csv => out.outputs.add("validate.csv", csv_bytes(&header, &rows)?),
            config::Format::Json => {
                #[derive(Serialize)]
                struct Doc<'a> {
                    conditions: &'a hypersde::ValidationReport,
                    generator: &'a hypersde::constants::GeneratorCheck,
                }
                out.outputs.add(
                    "validate.json",
                    json_bytes(&Doc {
                        conditions: &r,
                        generator: &gen,
                    }),
                )
            }
        }
    }
    Ok(())
}
