//! Monte-Carlo evaluation harness: paired runs over regenerated placements,
//! measurements, and initializations, the network-average error metric, and
//! empirical CDF tables. All randomness derives from a master seed through a
//! documented pure function, so any run is independently reproducible and
//! the per-run work can be farmed out in parallel without changing results.

use std::collections::BTreeMap;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Uniform};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::baselines::{
    solve_oracle_los, solve_pocs, solve_raw_huber, solve_relaxed_nls, PocsStepPolicy,
};
use crate::loss::LossKind;
use crate::measurement::{synthesize, MeasurementError, MeasurementSet, NoiseModel};
use crate::network::{build_topology, distance, Network, NetworkError, NodeId, Position};
use crate::solver::{
    initial_estimates, run_stage, solve_two_stage, EstimateState, Schedule, SolveError,
    SolveTrace, StageConfig, Termination,
};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("invalid scenario config: {0}")]
    Config(String),
    #[error("estimate list has {got} entries but truth has {expected}")]
    LengthMismatch { got: usize, expected: usize },
    #[error("cannot build a CDF from zero samples")]
    EmptySamples,
    #[error(transparent)]
    Solve(#[from] SolveError),
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Measurement(#[from] MeasurementError),
}

/// The solvers the harness can run side by side on identical inputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Stage one alone: relaxed-Huber descent.
    RelaxedHuber,
    /// Stage one followed by the Huber refinement stage.
    TwoStage,
    RelaxedNls,
    RawHuber,
    Pocs,
    OracleLos,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::RelaxedHuber,
        Method::TwoStage,
        Method::RelaxedNls,
        Method::RawHuber,
        Method::Pocs,
        Method::OracleLos,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Method::RelaxedHuber => "relaxed_huber",
            Method::TwoStage => "two_stage",
            Method::RelaxedNls => "relaxed_nls",
            Method::RawHuber => "raw_huber",
            Method::Pocs => "pocs",
            Method::OracleLos => "oracle_los",
        }
    }

    /// Whether the method reads ground-truth LOS/NLOS labels.
    pub fn needs_labels(&self) -> bool {
        matches!(self, Method::OracleLos)
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "relaxed_huber" | "stage1" => Ok(Method::RelaxedHuber),
            "two_stage" => Ok(Method::TwoStage),
            "relaxed_nls" => Ok(Method::RelaxedNls),
            "raw_huber" => Ok(Method::RawHuber),
            "pocs" => Ok(Method::Pocs),
            "oracle_los" => Ok(Method::OracleLos),
            other => Err(format!(
                "unknown method `{other}` (expected one of: relaxed_huber, two_stage, \
                 relaxed_nls, raw_huber, pocs, oracle_los)"
            )),
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Full experiment description. The defaults reproduce the reference
/// simulation setup: a 10 x 10 m area with four corner anchors, 50 sensors,
/// sigma_n = 0.5 m, exponential NLOS bias of mean 10 m, Gaussian
/// initialization of std 10 m, 500 runs, and 50 rounds per stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub area: [f64; 2],
    pub num_sensors: usize,
    pub anchors: Vec<Position>,
    /// `None` means full connectivity.
    pub comm_radius: Option<f64>,
    /// Redraw the sensor placement every run (the default) or keep one
    /// placement across all runs.
    pub redraw_placement: bool,
    pub noise: NoiseModel,
    pub init_std: f64,
    pub mc_runs: usize,
    pub stage1: StageConfig,
    pub stage2: StageConfig,
    pub pocs_rounds: usize,
    /// Step size for the relaxed-NLS baseline. Unlike the saturated Huber
    /// gradients, the hinge-squared gradient grows with the residual, and
    /// stage one's step diverges on dense graphs; the default is matched to
    /// the descent stability bound. `None` reuses `stage1.step_size`.
    pub relaxed_nls_step: Option<f64>,
    /// Step size for the oracle's NLS refinement; `None` picks a
    /// degree-aware stable step of `0.25 / max_degree`.
    pub oracle_step: Option<f64>,
    pub oracle_rounds: usize,
    pub schedule: Schedule,
    /// Noise scale handed to the solvers for knee tuning; defaults to
    /// `noise.sigma_n`. Lets noiseless synthesis keep a sensible knee.
    pub solver_sigma: Option<f64>,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            area: [10.0, 10.0],
            num_sensors: 50,
            anchors: vec![
                Position::new(0.0, 0.0),
                Position::new(10.0, 0.0),
                Position::new(10.0, 10.0),
                Position::new(0.0, 10.0),
            ],
            comm_radius: None,
            redraw_placement: true,
            noise: NoiseModel {
                sigma_n: 0.5,
                nlos_prob: 0.5,
                bias_mean: 10.0,
            },
            init_std: 10.0,
            mc_runs: 500,
            stage1: StageConfig::stage1_defaults(),
            stage2: StageConfig::stage2_defaults(),
            pocs_rounds: 50,
            relaxed_nls_step: Some(0.01),
            oracle_step: None,
            oracle_rounds: 100,
            schedule: Schedule::Jacobi,
            solver_sigma: None,
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<(), EvalError> {
        let bad = |msg: String| Err(EvalError::Config(msg));
        if !(self.area[0] > 0.0 && self.area[1] > 0.0)
            || !self.area[0].is_finite()
            || !self.area[1].is_finite()
        {
            return bad(format!("area: both extents must be finite and > 0, got {:?}", self.area));
        }
        if self.num_sensors == 0 {
            return bad("num_sensors: must be >= 1".into());
        }
        if self.anchors.is_empty() {
            return bad("anchors: at least one anchor is required".into());
        }
        for (k, a) in self.anchors.iter().enumerate() {
            if !a.is_finite() {
                return bad(format!("anchors[{k}]: coordinates must be finite"));
            }
        }
        if let Some(r) = self.comm_radius {
            if r.is_nan() || r < 0.0 {
                return bad(format!("comm_radius: must be >= 0, got {r}"));
            }
        }
        self.noise
            .validate()
            .map_err(|e| EvalError::Config(format!("noise: {e}")))?;
        if !self.init_std.is_finite() || self.init_std < 0.0 {
            return bad(format!("init_std: must be >= 0, got {}", self.init_std));
        }
        if self.mc_runs == 0 {
            return bad("mc_runs: must be >= 1".into());
        }
        self.stage1
            .validate()
            .map_err(|e| EvalError::Config(format!("stage1: {e}")))?;
        self.stage2
            .validate()
            .map_err(|e| EvalError::Config(format!("stage2: {e}")))?;
        if self.pocs_rounds == 0 {
            return bad("pocs_rounds: must be >= 1".into());
        }
        if let Some(s) = self.relaxed_nls_step {
            if !s.is_finite() || s <= 0.0 {
                return bad(format!("relaxed_nls_step: must be > 0, got {s}"));
            }
        }
        if let Some(s) = self.oracle_step {
            if !s.is_finite() || s <= 0.0 {
                return bad(format!("oracle_step: must be > 0, got {s}"));
            }
        }
        if self.oracle_rounds == 0 {
            return bad("oracle_rounds: must be >= 1".into());
        }
        if let Some(s) = self.solver_sigma {
            if !s.is_finite() || s <= 0.0 {
                return bad(format!("solver_sigma: must be > 0, got {s}"));
            }
        }
        Ok(())
    }

    pub fn solver_sigma(&self) -> f64 {
        self.solver_sigma.unwrap_or(self.noise.sigma_n)
    }
}

/// Root of the mean squared per-sensor position error for one realization.
pub fn network_error(estimates: &[Position], truth: &[Position]) -> Result<f64, EvalError> {
    if estimates.len() != truth.len() {
        return Err(EvalError::LengthMismatch {
            got: estimates.len(),
            expected: truth.len(),
        });
    }
    if estimates.is_empty() {
        return Err(EvalError::LengthMismatch { got: 0, expected: 0 });
    }
    let sum_sq: f64 = estimates
        .iter()
        .zip(truth)
        .map(|(e, t)| {
            let d = distance(*e, *t);
            d * d
        })
        .sum();
    Ok((sum_sq / estimates.len() as f64).sqrt())
}

/// Independent randomness streams drawn from one master seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SeedStream {
    Placement = 1,
    Measurement = 2,
    Init = 3,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Pure seed derivation: run `k` of stream `s` under master seed `m` maps to
/// `splitmix64(splitmix64(splitmix64(m) ^ k) ^ s)`.
pub fn derive_seed(master: u64, run: u64, stream: SeedStream) -> u64 {
    splitmix64(splitmix64(splitmix64(master) ^ run) ^ stream as u64)
}

/// Summary of one solve stage inside a run record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageSummary {
    pub rounds: usize,
    pub termination: Termination,
    pub final_cost: Option<f64>,
}

impl From<&SolveTrace> for StageSummary {
    fn from(t: &SolveTrace) -> Self {
        Self {
            rounds: t.rounds,
            termination: t.termination,
            // Diverged stages can record a non-finite cost, which JSON
            // cannot carry.
            final_cost: t.final_cost().filter(|c| c.is_finite()),
        }
    }
}

/// One Monte-Carlo realization for one method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run: u64,
    pub measurement_hash: u64,
    /// Network-average error; absent when the solver diverged.
    pub network_error_m: Option<f64>,
    pub per_sensor_errors_m: Vec<f64>,
    pub stages: Vec<StageSummary>,
    pub failed: bool,
}

/// All runs of one method plus aggregate statistics. Failed runs stay in
/// `records` and are counted, but their errors never enter the CDF samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub method: String,
    pub mc_runs: usize,
    pub failures: usize,
    pub sorted_errors_m: Vec<f64>,
    pub mean_m: f64,
    pub median_m: f64,
    pub records: Vec<RunRecord>,
}

impl RunReport {
    fn from_records(method: &str, mc_runs: usize, records: Vec<RunRecord>) -> Self {
        let mut errors: Vec<f64> = records
            .iter()
            .filter_map(|r| r.network_error_m)
            .collect();
        errors.sort_by(|a, b| a.total_cmp(b));
        let failures = records.iter().filter(|r| r.failed).count();
        let mean = if errors.is_empty() {
            f64::NAN
        } else {
            errors.iter().sum::<f64>() / errors.len() as f64
        };
        let median = quantile(&errors, 0.5);
        Self {
            method: method.to_string(),
            mc_runs,
            failures,
            sorted_errors_m: errors,
            mean_m: mean,
            median_m: median,
            records,
        }
    }

    pub fn quantile(&self, q: f64) -> f64 {
        quantile(&self.sorted_errors_m, q)
    }
}

/// Linear-interpolation quantile of an ascending sample vector.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let q = q.clamp(0.0, 1.0);
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    if lo == hi {
        sorted[lo]
    } else {
        let w = pos - lo as f64;
        sorted[lo] * (1.0 - w) + sorted[hi] * w
    }
}

/// Empirical CDF of the report's error samples at the given grid points.
pub fn cdf_table(report: &RunReport, grid: &[f64]) -> Result<Vec<(f64, f64)>, EvalError> {
    if report.sorted_errors_m.is_empty() {
        return Err(EvalError::EmptySamples);
    }
    let n = report.sorted_errors_m.len() as f64;
    Ok(grid
        .iter()
        .map(|&g| {
            let count = report
                .sorted_errors_m
                .partition_point(|&e| e <= g);
            (g, count as f64 / n)
        })
        .collect())
}

fn place_sensors(scenario: &ScenarioConfig, seed: u64) -> Vec<Position> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ux = Uniform::new(0.0, scenario.area[0]).expect("validated area");
    let uy = Uniform::new(0.0, scenario.area[1]).expect("validated area");
    (0..scenario.num_sensors)
        .map(|_| Position::new(ux.sample(&mut rng), uy.sample(&mut rng)))
        .collect()
}

fn max_degree(net: &Network) -> usize {
    (0..net.num_sensors())
        .map(|i| net.neighbors(NodeId(i)).map(|n| n.len()).unwrap_or(0))
        .max()
        .unwrap_or(0)
}

/// The oracle's NLS stage config for a given network.
pub fn oracle_config(scenario: &ScenarioConfig, net: &Network) -> StageConfig {
    let step = scenario
        .oracle_step
        .unwrap_or_else(|| 0.25 / max_degree(net).max(1) as f64);
    StageConfig {
        loss_kind: LossKind::Nls,
        step_size: step,
        knee_scale: 1.0,
        max_rounds: scenario.oracle_rounds,
        move_tol: 0.0,
    }
}

/// Runs one method on one realization. Returns the estimates and the full
/// per-stage traces, or the solve error (divergence included).
pub fn run_method(
    method: Method,
    net: &Network,
    ms: &MeasurementSet,
    init: &EstimateState,
    scenario: &ScenarioConfig,
) -> Result<(EstimateState, Vec<SolveTrace>), SolveError> {
    let sigma = scenario.solver_sigma();
    let schedule = scenario.schedule;
    match method {
        Method::RelaxedHuber => {
            let cfg = scenario.stage1.with_kind(LossKind::RelaxedHuber);
            let (out, t) = run_stage(net, ms, init, &cfg, sigma, schedule)?;
            Ok((out, vec![t]))
        }
        Method::TwoStage => {
            let (out, t1, t2) = solve_two_stage(
                net,
                ms,
                init,
                &scenario.stage1,
                &scenario.stage2,
                sigma,
                schedule,
            )?;
            Ok((out, vec![t1, t2]))
        }
        Method::RelaxedNls => {
            let cfg = StageConfig {
                step_size: scenario.relaxed_nls_step.unwrap_or(scenario.stage1.step_size),
                ..scenario.stage1
            };
            let (out, t) = solve_relaxed_nls(net, ms, init, &cfg, sigma, schedule)?;
            Ok((out, vec![t]))
        }
        Method::RawHuber => {
            let (out, t) = solve_raw_huber(net, ms, init, &scenario.stage1, sigma, schedule)?;
            Ok((out, vec![t]))
        }
        Method::Pocs => {
            let (out, t) = solve_pocs(net, ms, init, scenario.pocs_rounds, PocsStepPolicy::default())?;
            Ok((out, vec![t]))
        }
        Method::OracleLos => {
            let cfg = oracle_config(scenario, net);
            let (out, t) = solve_oracle_los(net, ms, init, &cfg, sigma, schedule)?;
            Ok((out, vec![t]))
        }
    }
}

/// Builds the network, measurements, and init for run `k`.
pub fn realize_run(
    scenario: &ScenarioConfig,
    master_seed: u64,
    run: u64,
) -> Result<(Network, MeasurementSet, EstimateState), EvalError> {
    let placement_run = if scenario.redraw_placement { run } else { 0 };
    let sensors = place_sensors(
        scenario,
        derive_seed(master_seed, placement_run, SeedStream::Placement),
    );
    let net = build_topology(
        &sensors,
        &scenario.anchors,
        scenario.comm_radius.unwrap_or(f64::INFINITY),
    )?;
    let ms = synthesize(
        &net,
        &scenario.noise,
        derive_seed(master_seed, run, SeedStream::Measurement),
    )?;
    let init = initial_estimates(
        &net,
        scenario.init_std,
        derive_seed(master_seed, run, SeedStream::Init),
    )?;
    Ok((net, ms, init))
}

/// Paired Monte-Carlo evaluation: every method inside one run sees the same
/// placement, measurements, and initialization. Runs execute in parallel;
/// aggregation happens in run order so the result is independent of the
/// worker count. Divergence failures are recorded and counted, all other
/// solver errors abort the evaluation.
pub fn run_monte_carlo(
    scenario: &ScenarioConfig,
    methods: &[Method],
    master_seed: u64,
) -> Result<BTreeMap<Method, RunReport>, EvalError> {
    scenario.validate()?;
    let per_run: Vec<Vec<RunRecord>> = (0..scenario.mc_runs as u64)
        .into_par_iter()
        .map(|run| -> Result<Vec<RunRecord>, EvalError> {
            let (net, ms, init) = realize_run(scenario, master_seed, run)?;
            let truth = net
                .true_sensor_positions()
                .expect("synthetic networks carry truth")
                .to_vec();
            let hash = ms.content_hash();
            let mut records = Vec::with_capacity(methods.len());
            for &method in methods {
                let record = match run_method(method, &net, &ms, &init, scenario) {
                    Ok((state, traces)) => {
                        let stages: Vec<StageSummary> =
                            traces.iter().map(StageSummary::from).collect();
                        let per_sensor: Vec<f64> = state
                            .positions
                            .iter()
                            .zip(&truth)
                            .map(|(e, t)| distance(*e, *t))
                            .collect();
                        let err = network_error(&state.positions, &truth)?;
                        RunRecord {
                            run,
                            measurement_hash: hash,
                            network_error_m: Some(err),
                            per_sensor_errors_m: per_sensor,
                            stages,
                            failed: false,
                        }
                    }
                    Err(SolveError::Diverged(d)) => RunRecord {
                        run,
                        measurement_hash: hash,
                        network_error_m: None,
                        per_sensor_errors_m: Vec::new(),
                        stages: vec![StageSummary::from(&d.trace)],
                        failed: true,
                    },
                    Err(e) => return Err(e.into()),
                };
                records.push(record);
            }
            Ok(records)
        })
        .collect::<Result<Vec<_>, EvalError>>()?;

    let mut out = BTreeMap::new();
    for (m_idx, &method) in methods.iter().enumerate() {
        let records: Vec<RunRecord> = per_run.iter().map(|r| r[m_idx].clone()).collect();
        out.insert(
            method,
            RunReport::from_records(method.name(), scenario.mc_runs, records),
        );
    }
    Ok(out)
}

/// Monte Carlo over re-initializations of a fixed network and measurement
/// set (the real-data protocol): run `k` draws a fresh init from the master
/// seed, every method sees the same init. Requires ground-truth sensor
/// positions for the error metric.
pub fn run_reinit_monte_carlo(
    net: &Network,
    ms: &MeasurementSet,
    scenario: &ScenarioConfig,
    methods: &[Method],
    master_seed: u64,
    runs: usize,
) -> Result<BTreeMap<Method, RunReport>, EvalError> {
    let truth = net
        .true_sensor_positions()
        .ok_or_else(|| EvalError::Config("network has no ground-truth sensor positions".into()))?
        .to_vec();
    let hash = ms.content_hash();
    let per_run: Vec<Vec<RunRecord>> = (0..runs as u64)
        .into_par_iter()
        .map(|run| -> Result<Vec<RunRecord>, EvalError> {
            let init = initial_estimates(
                net,
                scenario.init_std,
                derive_seed(master_seed, run, SeedStream::Init),
            )?;
            let mut records = Vec::with_capacity(methods.len());
            for &method in methods {
                let record = match run_method(method, net, ms, &init, scenario) {
                    Ok((state, traces)) => {
                        let stages: Vec<StageSummary> =
                            traces.iter().map(StageSummary::from).collect();
                        let per_sensor: Vec<f64> = state
                            .positions
                            .iter()
                            .zip(&truth)
                            .map(|(e, t)| distance(*e, *t))
                            .collect();
                        let err = network_error(&state.positions, &truth)?;
                        RunRecord {
                            run,
                            measurement_hash: hash,
                            network_error_m: Some(err),
                            per_sensor_errors_m: per_sensor,
                            stages,
                            failed: false,
                        }
                    }
                    Err(SolveError::Diverged(d)) => RunRecord {
                        run,
                        measurement_hash: hash,
                        network_error_m: None,
                        per_sensor_errors_m: Vec::new(),
                        stages: vec![StageSummary::from(&d.trace)],
                        failed: true,
                    },
                    Err(e) => return Err(e.into()),
                };
                records.push(record);
            }
            Ok(records)
        })
        .collect::<Result<Vec<_>, EvalError>>()?;

    let mut out = BTreeMap::new();
    for (m_idx, &method) in methods.iter().enumerate() {
        let records: Vec<RunRecord> = per_run.iter().map(|r| r[m_idx].clone()).collect();
        out.insert(method, RunReport::from_records(method.name(), runs, records));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn pos(x: f64, y: f64) -> Position {
        Position::new(x, y)
    }

    #[test]
    fn network_error_exact_estimates() {
        let truth = vec![pos(1.0, 2.0), pos(3.0, 4.0)];
        assert_eq!(network_error(&truth, &truth).unwrap(), 0.0);
    }

    #[test]
    fn network_error_hand_value() {
        // offsets (3,4) and (0,0): sqrt((25 + 0) / 2)
        let truth = vec![pos(0.0, 0.0), pos(5.0, 5.0)];
        let est = vec![pos(3.0, 4.0), pos(5.0, 5.0)];
        assert_relative_eq!(
            network_error(&est, &truth).unwrap(),
            (25.0f64 / 2.0).sqrt(),
            epsilon = 1e-12
        );
    }

    #[test]
    fn network_error_single_sensor() {
        assert_relative_eq!(
            network_error(&[pos(1.0, 0.0)], &[pos(0.0, 0.0)]).unwrap(),
            1.0
        );
    }

    #[test]
    fn network_error_length_mismatch() {
        assert!(matches!(
            network_error(&[pos(0.0, 0.0)], &[]),
            Err(EvalError::LengthMismatch { .. })
        ));
    }

    #[test]
    fn network_error_translation_invariant() {
        let truth = vec![pos(1.0, 2.0), pos(5.0, 1.0), pos(3.0, 7.0)];
        let est = vec![pos(1.5, 2.5), pos(4.0, 1.5), pos(3.0, 6.0)];
        let base = network_error(&est, &truth).unwrap();
        let shift = |v: &[Position]| -> Vec<Position> {
            v.iter().map(|p| pos(p.x + 123.4, p.y - 56.7)).collect()
        };
        let shifted = network_error(&shift(&est), &shift(&truth)).unwrap();
        assert_relative_eq!(base, shifted, epsilon = 1e-9);
    }

    #[test]
    fn seed_derivation_is_pure_and_stream_separated() {
        let a = derive_seed(42, 7, SeedStream::Measurement);
        assert_eq!(a, derive_seed(42, 7, SeedStream::Measurement));
        assert_ne!(a, derive_seed(42, 7, SeedStream::Init));
        assert_ne!(a, derive_seed(42, 8, SeedStream::Measurement));
        assert_ne!(a, derive_seed(43, 7, SeedStream::Measurement));
    }

    fn tiny_scenario() -> ScenarioConfig {
        ScenarioConfig {
            num_sensors: 5,
            mc_runs: 2,
            noise: NoiseModel {
                sigma_n: 0.5,
                nlos_prob: 0.5,
                bias_mean: 10.0,
            },
            stage1: StageConfig {
                max_rounds: 20,
                ..StageConfig::stage1_defaults()
            },
            stage2: StageConfig {
                max_rounds: 20,
                ..StageConfig::stage2_defaults()
            },
            pocs_rounds: 20,
            oracle_rounds: 20,
            ..ScenarioConfig::default()
        }
    }

    #[test]
    fn monte_carlo_pairs_measurements_and_is_deterministic() {
        let scenario = tiny_scenario();
        let methods = [Method::TwoStage, Method::Pocs];
        let a = run_monte_carlo(&scenario, &methods, 99).unwrap();
        let b = run_monte_carlo(&scenario, &methods, 99).unwrap();
        assert_eq!(a, b);
        for run in 0..scenario.mc_runs {
            let h1 = a[&Method::TwoStage].records[run].measurement_hash;
            let h2 = a[&Method::Pocs].records[run].measurement_hash;
            assert_eq!(h1, h2, "run {run} measurements differ between methods");
        }
        let c = run_monte_carlo(&scenario, &methods, 100).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn monte_carlo_noise_free_recovery_across_methods() {
        let scenario = ScenarioConfig {
            noise: NoiseModel {
                sigma_n: 0.0,
                nlos_prob: 0.0,
                bias_mean: 10.0,
            },
            solver_sigma: Some(0.5),
            num_sensors: 5,
            mc_runs: 2,
            init_std: 1.0,
            stage1: StageConfig {
                max_rounds: 2000,
                ..StageConfig::stage1_defaults()
            },
            stage2: StageConfig {
                max_rounds: 2000,
                ..StageConfig::stage2_defaults()
            },
            pocs_rounds: 2000,
            oracle_rounds: 2000,
            ..ScenarioConfig::default()
        };
        // Noise-free recovery is geometry-sensitive: near-tangent ball
        // intersections make the hinge losses converge sublinearly. This
        // seed draws well-conditioned placements.
        let reports = run_monte_carlo(&scenario, &Method::ALL, 1).unwrap();
        for (method, report) in &reports {
            assert_eq!(report.failures, 0, "{method} failed runs");
            for r in &report.records {
                let e = r.network_error_m.unwrap();
                assert!(e < 1e-2, "{method} run {} error {e}", r.run);
            }
        }
    }

    #[test]
    fn fixed_placement_mode_reuses_sensor_positions() {
        let mut scenario = tiny_scenario();
        scenario.redraw_placement = false;
        let (net0, _, _) = realize_run(&scenario, 5, 0).unwrap();
        let (net1, _, _) = realize_run(&scenario, 5, 1).unwrap();
        assert_eq!(
            net0.true_sensor_positions().unwrap(),
            net1.true_sensor_positions().unwrap()
        );
        scenario.redraw_placement = true;
        let (net2, _, _) = realize_run(&scenario, 5, 1).unwrap();
        assert_ne!(
            net0.true_sensor_positions().unwrap(),
            net2.true_sensor_positions().unwrap()
        );
    }

    #[test]
    fn cdf_table_examples() {
        let report = RunReport {
            method: "x".into(),
            mc_runs: 3,
            failures: 0,
            sorted_errors_m: vec![1.0, 2.0, 3.0],
            mean_m: 2.0,
            median_m: 2.0,
            records: Vec::new(),
        };
        let t = cdf_table(&report, &[2.0]).unwrap();
        assert_relative_eq!(t[0].1, 2.0 / 3.0);
        assert_eq!(cdf_table(&report, &[0.5]).unwrap()[0].1, 0.0);
        assert_eq!(cdf_table(&report, &[9.0]).unwrap()[0].1, 1.0);
    }

    #[test]
    fn cdf_table_monotone_and_bounded() {
        let mut errors: Vec<f64> = (0..100).map(|i| ((i * 37) % 97) as f64 / 10.0).collect();
        errors.sort_by(|a, b| a.total_cmp(b));
        let report = RunReport {
            method: "x".into(),
            mc_runs: errors.len(),
            failures: 0,
            sorted_errors_m: errors,
            mean_m: 0.0,
            median_m: 0.0,
            records: Vec::new(),
        };
        let grid: Vec<f64> = (0..200).map(|i| i as f64 * 0.05).collect();
        let table = cdf_table(&report, &grid).unwrap();
        for w in table.windows(2) {
            assert!(w[1].1 >= w[0].1);
        }
        assert!(table.last().unwrap().1 <= 1.0);
    }

    #[test]
    fn cdf_table_rejects_empty() {
        let report = RunReport {
            method: "x".into(),
            mc_runs: 0,
            failures: 0,
            sorted_errors_m: Vec::new(),
            mean_m: f64::NAN,
            median_m: f64::NAN,
            records: Vec::new(),
        };
        assert!(matches!(cdf_table(&report, &[1.0]), Err(EvalError::EmptySamples)));
    }

    #[test]
    fn scenario_validation_names_fields() {
        let mut s = ScenarioConfig::default();
        s.noise.nlos_prob = 1.5;
        let msg = s.validate().unwrap_err().to_string();
        assert!(msg.contains("noise"), "message was: {msg}");
        let mut s = ScenarioConfig::default();
        s.mc_runs = 0;
        assert!(s.validate().unwrap_err().to_string().contains("mc_runs"));
        let mut s = ScenarioConfig::default();
        s.stage1.step_size = -1.0;
        assert!(s.validate().unwrap_err().to_string().contains("stage1"));
    }

    #[test]
    fn quantile_interpolates() {
        let v = [1.0, 2.0, 3.0, 4.0];
        assert_relative_eq!(quantile(&v, 0.5), 2.5);
        assert_relative_eq!(quantile(&v, 0.0), 1.0);
        assert_relative_eq!(quantile(&v, 1.0), 4.0);
    }

    #[test]
    fn method_parsing_round_trips() {
        for m in Method::ALL {
            assert_eq!(m.name().parse::<Method>().unwrap(), m);
        }
        assert!("bogus".parse::<Method>().is_err());
    }

    #[test]
    fn reinit_monte_carlo_shares_measurements_and_varies_inits() {
        let scenario = tiny_scenario();
        let (net, ms, _) = realize_run(&scenario, 3, 0).unwrap();
        let methods = [Method::RelaxedHuber, Method::TwoStage];
        let reports = run_reinit_monte_carlo(&net, &ms, &scenario, &methods, 5, 3).unwrap();
        let hash = ms.content_hash();
        for report in reports.values() {
            assert_eq!(report.records.len(), 3);
            for r in &report.records {
                assert_eq!(r.measurement_hash, hash);
            }
            // Different inits give different errors run to run.
            let errs: Vec<f64> = report
                .records
                .iter()
                .filter_map(|r| r.network_error_m)
                .collect();
            assert!(errs.windows(2).any(|w| w[0] != w[1]));
        }
        let again = run_reinit_monte_carlo(&net, &ms, &scenario, &methods, 5, 3).unwrap();
        assert_eq!(reports, again);
    }
}
