//! Simulation and explicit constants for SDEs with a drift that jumps across
//! a hyperplane.

pub mod constants;
mod error;
pub mod linalg;
pub mod model;
pub mod montecarlo;
pub mod noise;
pub mod paths;
pub mod stats;

pub use constants::{
    decay_constants, generator_bound, khasminskii_bound, lambda_threshold, rho, rho_upper,
    DecayConstants, GeneratorBound, Threshold,
};
pub use error::{Error, Result};
pub use model::{
    drift_eval, jump_matrix, validate_model, BuiltinKind, Coefficients, HyperplaneDriftModel,
    ModelConstants, SamplingBox, Side, ValidationReport,
};
pub use montecarlo::{
    decay_curve, exp_local_time_moment, gateaux_consistency, local_time_moments, verify_decay,
    weighted_flow_moment, Numerics,
};
pub use noise::{
    wiener, wiener_two_sided, IncrementsView, TimeGrid, TwoSidedNoise, WienerIncrements,
};
pub use paths::{
    coupled_log_separation, derivative_flow, euler_path, finite_difference_flow,
    occupation_local_time, tanaka_local_time, FlowPath, SeparationMode, Trajectory,
};
pub use stats::{all_pass, BoundCheck, KsResult, MCEstimate};
pub mod stationary;
pub use stationary::{
    cauchy_rate_check, pullback_decay, pullback_ensemble, pullback_sample, second_moment_curve,
    stationarity_test, uniqueness_coupling, CouplingReport, PullbackDecay, PullbackRun,
    StationarityReport,
};
