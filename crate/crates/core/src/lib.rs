//! Robust distributed cooperative localization over TOA range measurements
//! contaminated by unidentified NLOS bias.
//!
//! The main solver runs in two stages of synchronous per-node gradient
//! descent: a convex relaxation of the Huber cost first (robust to outliers
//! and indifferent to initialization), then the original Huber cost to
//! refine the stage-one estimates. Baseline solvers (relaxed NLS, raw Huber,
//! cooperative POCS, an oracle with perfect NLOS knowledge), a paired
//! Monte-Carlo evaluation harness, and file I/O for networks, measurements,
//! datasets, and reports round out the crate.

pub mod baselines;
pub mod dataio;
pub mod eval;
pub mod loss;
pub mod measurement;
pub mod network;
pub mod solver;

pub use eval::{
    cdf_table, derive_seed, network_error, run_monte_carlo, run_reinit_monte_carlo, EvalError,
    Method, RunRecord, RunReport, ScenarioConfig, SeedStream,
};
pub use loss::{link_cost, link_grad, network_cost, residual, LossError, LossKind, LossParams};
pub use measurement::{
    nlos_ratio, synthesize, LinkLabel, LinkMeasurement, MeasurementError, MeasurementSet,
    NoiseModel,
};
pub use network::{
    build_topology, distance, Edge, Network, NetworkError, NodeId, Position, Role,
};
pub use solver::{
    choose_alpha2, initial_estimates, node_update, run_stage, solve_two_stage, Alpha2Policy,
    EstimateState, Schedule, SolveError, SolveTrace, StageConfig, Termination,
};
