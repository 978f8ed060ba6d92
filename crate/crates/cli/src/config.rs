//! JSON run configuration.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use hypersde::{HyperplaneDriftModel, ModelConstants, Numerics};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelBlock,
    pub numerics: NumericsBlock,
    #[serde(default)]
    pub experiment: ExperimentBlock,
    #[serde(default)]
    pub output: OutputBlock,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelBlock {
    /// One of `ou`, `bang_bang`, `smooth_lipschitz`.
    pub name: String,
    pub d: usize,
    pub m: usize,
    pub lambda: f64,
    #[serde(default)]
    pub params: BTreeMap<String, f64>,
    pub declared: ModelConstants,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NumericsBlock {
    pub dt: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eps: Option<f64>,
    pub t_end: f64,
    pub n_paths: usize,
    pub seed: u64,
    #[serde(default = "one")]
    pub allowance_coef: f64,
}

fn one() -> f64 {
    1.0
}

/// Command-specific parameters; every field is optional.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentBlock {
    /// Start point; defaults to the origin.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x: Option<Vec<f64>>,
    /// Second start point for `decay`; defaults to `x + e_d`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub y: Option<Vec<f64>>,
    /// Report times; default to `t_end` times 1/8, 1/4, 1/2, 1.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub times: Option<Vec<f64>>,
    /// Record every `stride`-th state in `simulate`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stride: Option<usize>,
    /// Also record the derivative flow in `simulate`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub record_flow: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rate_tolerance: Option<f64>,
    /// Local-time moment orders.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub orders: Option<Vec<u32>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub start_grid: Option<Vec<Vec<f64>>>,
    /// Add the exponential local-time checks at `t0` and `5 t0`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exp_moment: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_records: Option<usize>,
    /// Finite-difference steps for the Gâteaux check in `flow`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fd_eps: Option<Vec<f64>>,
    /// Horizon of the Gâteaux check; defaults to `t_end`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fd_t: Option<f64>,
    /// Unit direction for the Gâteaux check; defaults to `e_d`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub direction: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_eval: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub depth: Option<f64>,
    /// Spacing of pullback start times.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub depth_step: Option<f64>,
    /// Second time of the stationarity test is `t_eval + t_shift`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_shift: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub realizations: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub validation_samples: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub half_width: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputBlock {
    #[serde(default = "default_dir")]
    pub directory: PathBuf,
    #[serde(default = "default_formats")]
    pub formats: Vec<Format>,
}

fn default_dir() -> PathBuf {
    PathBuf::from("out")
}

fn default_formats() -> Vec<Format> {
    vec![Format::Csv]
}

impl Default for OutputBlock {
    fn default() -> Self {
        Self {
            directory: default_dir(),
            formats: default_formats(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Parse(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        serde_json::from_str(text).map_err(|e| CliError::Parse(e.to_string()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let n = &self.numerics;
        let bad = |msg: String| Err(CliError::Validation(msg));
        if !(n.dt > 0.0 && n.dt.is_finite()) {
            return bad(format!("numerics.dt must be positive, got {}", n.dt));
        }
        if let Some(eps) = n.eps {
            if !(eps > 0.0 && eps.is_finite()) {
                return bad(format!("numerics.eps must be positive, got {eps}"));
            }
        }
        if !(n.t_end > 0.0 && n.t_end.is_finite()) {
            return bad(format!("numerics.t_end must be positive, got {}", n.t_end));
        }
        if n.n_paths < 2 {
            return bad(format!(
                "numerics.n_paths must be at least 2, got {}",
                n.n_paths
            ));
        }
        if !(n.allowance_coef >= 0.0 && n.allowance_coef.is_finite()) {
            return bad("numerics.allowance_coef must be non-negative".into());
        }
        if self.output.formats.is_empty() {
            return bad("output.formats must not be empty".into());
        }
        let model = self.build_model()?;
        let d = model.dim();
        let e = &self.experiment;
        for (name, p) in [("x", &e.x), ("y", &e.y), ("direction", &e.direction)] {
            if let Some(p) = p {
                if p.len() != d {
                    return bad(format!(
                        "experiment.{name} has length {}, expected {d}",
                        p.len()
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn build_model(&self) -> Result<HyperplaneDriftModel, CliError> {
        let b = &self.model;
        let kind = hypersde::BuiltinKind::from_params(&b.name, &b.params)?;
        let model = HyperplaneDriftModel::from_kind(kind, b.d, b.lambda, b.declared)?;
        if model.noise_dim() != b.m {
            return Err(CliError::Validation(format!(
                "model `{}` has m = {}, config says {}",
                b.name,
                model.noise_dim(),
                b.m
            )));
        }
        Ok(model)
    }

    /// Numerics with the given sub-seed in place of the master seed.
    pub fn numerics(&self, seed: u64) -> Numerics {
        let n = &self.numerics;
        let mut out = Numerics::new(n.dt, n.n_paths, seed).with_allowance_coef(n.allowance_coef);
        if let Some(eps) = n.eps {
            out = out.with_eps(eps);
        }
        out
    }

    pub fn start_point(&self) -> Vec<f64> {
        self.experiment
            .x
            .clone()
            .unwrap_or_else(|| vec![0.0; self.model.d])
    }

    pub fn times(&self) -> Vec<f64> {
        self.experiment.times.clone().unwrap_or_else(|| {
            let t = self.numerics.t_end;
            vec![t / 8.0, t / 4.0, t / 2.0, t]
        })
    }
}
