//! Distributed two-stage gradient descent: synchronous per-node rounds over
//! the relaxed Huber cost (stage one), then over the original Huber cost
//! (stage two), each node reading only its own estimate, its neighbours'
//! estimates, and its incident measurements. Both Jacobi and Gauss-Seidel
//! round schedules are supported; Jacobi is the default because it is
//! order-independent and parallelizable.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::loss::{link_grad, network_cost, LossError, LossKind, LossParams};
use crate::measurement::MeasurementSet;
use crate::network::{distance, Network, NodeId, Position, DIVERGENCE_LIMIT_M};

#[derive(Debug, Error, PartialEq)]
pub enum SolveError {
    #[error("invalid stage config: {0}")]
    BadConfig(String),
    #[error("init has {got} sensor estimates, expected {expected}")]
    BadInit { got: usize, expected: usize },
    #[error("node {node} is missing the view of neighbor {neighbor}")]
    MissingNeighborView { node: usize, neighbor: usize },
    #[error("solver diverged after {} rounds (coordinate beyond {DIVERGENCE_LIMIT_M} m)", .0.trace.rounds)]
    Diverged(Box<DivergedSolve>),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Measurement(#[from] crate::measurement::MeasurementError),
    #[error(transparent)]
    Network(#[from] crate::network::NetworkError),
}

/// Partial result carried by a divergence error.
#[derive(Debug, Clone, PartialEq)]
pub struct DivergedSolve {
    pub state: EstimateState,
    pub trace: SolveTrace,
}

/// Per-round update ordering. Jacobi applies all round-l updates atomically
/// from the round-l snapshot; Gauss-Seidel updates sensors in ascending index
/// order, later nodes seeing earlier nodes' fresh values.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Schedule {
    #[default]
    Jacobi,
    GaussSeidel,
}

/// One descent stage: loss kind, step size, Huber knee multiplier
/// (`K = knee_scale * sigma_n`), round budget, and the per-round movement
/// threshold below which the stage stops.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageConfig {
    pub loss_kind: LossKind,
    pub step_size: f64,
    pub knee_scale: f64,
    pub max_rounds: usize,
    pub move_tol: f64,
}

impl StageConfig {
    /// Stage-one defaults: relaxed Huber, mu = 0.04, K = 2 sigma, 50 rounds.
    pub fn stage1_defaults() -> Self {
        Self {
            loss_kind: LossKind::RelaxedHuber,
            step_size: 0.04,
            knee_scale: 2.0,
            max_rounds: 50,
            move_tol: 0.0,
        }
    }

    /// Stage-two defaults: Huber, mu = 0.01, K = 0.1 sigma, 50 rounds.
    pub fn stage2_defaults() -> Self {
        Self {
            loss_kind: LossKind::Huber,
            step_size: 0.01,
            knee_scale: 0.1,
            max_rounds: 50,
            move_tol: 0.0,
        }
    }

    pub fn with_kind(mut self, kind: LossKind) -> Self {
        self.loss_kind = kind;
        self
    }

    pub fn validate(&self) -> Result<(), SolveError> {
        if !self.step_size.is_finite() || self.step_size <= 0.0 {
            return Err(SolveError::BadConfig(format!(
                "step_size must be > 0, got {}",
                self.step_size
            )));
        }
        if self.move_tol.is_nan() || self.move_tol < 0.0 {
            return Err(SolveError::BadConfig(format!(
                "move_tol must be >= 0, got {}",
                self.move_tol
            )));
        }
        if self.loss_kind.uses_knee() && (!self.knee_scale.is_finite() || self.knee_scale <= 0.0) {
            return Err(SolveError::BadConfig(format!(
                "knee_scale must be > 0 for Huber losses, got {}",
                self.knee_scale
            )));
        }
        Ok(())
    }

    /// Knee parameter for this stage; the NLS kinds ignore it.
    pub fn loss_params(&self, sigma_n: f64) -> Result<LossParams, LossError> {
        if self.loss_kind.uses_knee() {
            LossParams::from_scale(self.knee_scale, sigma_n)
        } else {
            LossParams::new(1.0)
        }
    }
}

/// Sensor position estimates after `round` update rounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateState {
    pub round: usize,
    pub positions: Vec<Position>,
}

impl EstimateState {
    pub fn new(positions: Vec<Position>) -> Self {
        Self { round: 0, positions }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Converged,
    MaxRounds,
    Diverged,
}

impl Termination {
    pub fn as_str(&self) -> &'static str {
        match self {
            Termination::Converged => "converged",
            Termination::MaxRounds => "max_rounds",
            Termination::Diverged => "diverged",
        }
    }
}

/// Per-round record of one stage run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveTrace {
    pub cost_per_round: Vec<f64>,
    pub max_move_per_round: Vec<f64>,
    pub rounds: usize,
    pub termination: Termination,
    pub warnings: Vec<String>,
}

impl SolveTrace {
    pub(crate) fn empty() -> Self {
        Self {
            cost_per_round: Vec::new(),
            max_move_per_round: Vec::new(),
            rounds: 0,
            termination: Termination::MaxRounds,
            warnings: Vec::new(),
        }
    }

    pub(crate) fn record_round(&mut self, cost: f64, max_move: f64) {
        self.cost_per_round.push(cost);
        self.max_move_per_round.push(max_move);
        self.rounds += 1;
    }

    pub fn final_cost(&self) -> Option<f64> {
        self.cost_per_round.last().copied()
    }
}

/// Sums 2-vectors in a value-sorted order so the result is independent of
/// the labelling (and hence iteration order) of the contributing neighbours.
pub(crate) fn sum_sorted(contribs: &mut Vec<[f64; 2]>) -> [f64; 2] {
    contribs.sort_unstable_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])));
    let mut s = [0.0, 0.0];
    for c in contribs.iter() {
        s[0] += c[0];
        s[1] += c[1];
    }
    s
}

fn descent_step(
    local: Position,
    neighbors: &[(Position, f64)],
    kind: LossKind,
    params: &LossParams,
    step: f64,
    scratch: &mut Vec<[f64; 2]>,
) -> Position {
    scratch.clear();
    for &(pj, r) in neighbors {
        scratch.push(link_grad(kind, params, local, pj, r));
    }
    let g = sum_sorted(scratch);
    Position::new(local.x - step * g[0], local.y - step * g[1])
}

/// One gradient step for node `i`: the local estimate minus `step_size`
/// times the summed link gradients over its incident measurements. Only
/// node-local information is consumed: `neighbor_views` must cover every
/// neighbour that shares a measurement with `i`.
pub fn node_update(
    i: NodeId,
    neighbor_views: &BTreeMap<NodeId, Position>,
    local_est: Position,
    ms: &MeasurementSet,
    cfg: &StageConfig,
    sigma_n: f64,
) -> Result<Position, SolveError> {
    cfg.validate()?;
    let params = cfg.loss_params(sigma_n)?;
    let mut neighbors = Vec::new();
    for (e, m) in ms.iter() {
        if let Some(j) = e.other(i) {
            let pj = neighbor_views
                .get(&j)
                .ok_or(SolveError::MissingNeighborView {
                    node: i.0,
                    neighbor: j.0,
                })?;
            neighbors.push((*pj, m.range));
        }
    }
    let mut scratch = Vec::new();
    Ok(descent_step(
        local_est,
        &neighbors,
        cfg.loss_kind,
        &params,
        cfg.step_size,
        &mut scratch,
    ))
}

fn out_of_bounds(p: Position) -> bool {
    !p.is_finite() || p.x.abs() > DIVERGENCE_LIMIT_M || p.y.abs() > DIVERGENCE_LIMIT_M
}

/// Incident (neighbour, range) lists per sensor, derived once per solve.
fn sensor_adjacency(
    net: &Network,
    ms: &MeasurementSet,
) -> Result<Vec<Vec<(NodeId, f64)>>, LossError> {
    let n = net.num_sensors();
    let mut adj: Vec<Vec<(NodeId, f64)>> = vec![Vec::new(); n];
    for edge in net.edges() {
        let m = ms
            .get(edge)
            .ok_or(LossError::MissingMeasurement(edge.lo().0, edge.hi().0))?;
        if edge.lo().0 < n {
            adj[edge.lo().0].push((edge.hi(), m.range));
        }
        if edge.hi().0 < n {
            adj[edge.hi().0].push((edge.lo(), m.range));
        }
    }
    Ok(adj)
}

/// Runs one descent stage: synchronous rounds of `node_update` over all
/// sensors until the round budget is exhausted or no sensor moved more than
/// `move_tol` in a round. A coordinate beyond `DIVERGENCE_LIMIT_M` aborts
/// with an error carrying the partial trace.
pub fn run_stage(
    net: &Network,
    ms: &MeasurementSet,
    init: &EstimateState,
    cfg: &StageConfig,
    sigma_n: f64,
    schedule: Schedule,
) -> Result<(EstimateState, SolveTrace), SolveError> {
    cfg.validate()?;
    if init.positions.len() != net.num_sensors() {
        return Err(SolveError::BadInit {
            got: init.positions.len(),
            expected: net.num_sensors(),
        });
    }
    let params = cfg.loss_params(sigma_n)?;
    let adj = sensor_adjacency(net, ms)?;
    let n = net.num_sensors();

    let mut positions = init.positions.clone();
    let mut trace = SolveTrace::empty();
    let mut scratch = Vec::new();
    let mut neigh: Vec<(Position, f64)> = Vec::new();

    for _ in 0..cfg.max_rounds {
        let prev = positions.clone();
        for i in 0..n {
            neigh.clear();
            for &(j, r) in &adj[i] {
                let pj = match net.anchor_position(j) {
                    Some(p) => p,
                    None => match schedule {
                        Schedule::Jacobi => prev[j.0],
                        Schedule::GaussSeidel => positions[j.0],
                    },
                };
                neigh.push((pj, r));
            }
            positions[i] =
                descent_step(positions[i], &neigh, cfg.loss_kind, &params, cfg.step_size, &mut scratch);
        }

        let mut max_move = 0.0f64;
        let mut diverged = false;
        for i in 0..n {
            let d = distance(positions[i], prev[i]);
            if d.is_nan() || out_of_bounds(positions[i]) {
                diverged = true;
            }
            max_move = max_move.max(d);
        }
        let cost = network_cost(cfg.loss_kind, &params, &positions, net, ms)?;
        trace.record_round(cost, max_move);

        if diverged {
            trace.termination = Termination::Diverged;
            return Err(SolveError::Diverged(Box::new(DivergedSolve {
                state: EstimateState {
                    round: init.round + trace.rounds,
                    positions,
                },
                trace,
            })));
        }
        if max_move <= cfg.move_tol {
            trace.termination = Termination::Converged;
            return Ok((
                EstimateState {
                    round: init.round + trace.rounds,
                    positions,
                },
                trace,
            ));
        }
    }

    trace.termination = Termination::MaxRounds;
    let rounds = trace.rounds;
    Ok((
        EstimateState {
            round: init.round + rounds,
            positions,
        },
        trace,
    ))
}

/// The full two-stage algorithm: stage one from `init`, stage two from the
/// stage-one output. Defaults pair relaxed Huber with Huber; other kinds are
/// accepted for ablations.
pub fn solve_two_stage(
    net: &Network,
    ms: &MeasurementSet,
    init: &EstimateState,
    stage1: &StageConfig,
    stage2: &StageConfig,
    sigma_n: f64,
    schedule: Schedule,
) -> Result<(EstimateState, SolveTrace, SolveTrace), SolveError> {
    let (mid, trace1) = run_stage(net, ms, init, stage1, sigma_n, schedule)?;
    let (out, trace2) = run_stage(net, ms, &mid, stage2, sigma_n, schedule)?;
    Ok((out, trace1, trace2))
}

/// Stage-two knee multiplier policy: a small knee is the safe choice when
/// the NLOS ratio is unknown or high; a standard M-estimation knee pays off
/// when contamination is known to be low.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Alpha2Policy {
    pub ratio_threshold: f64,
    pub small_alpha: f64,
    pub large_alpha: f64,
}

impl Default for Alpha2Policy {
    fn default() -> Self {
        Self {
            ratio_threshold: 0.5,
            small_alpha: 0.1,
            large_alpha: 1.5,
        }
    }
}

impl Alpha2Policy {
    pub fn choose(&self, nlos_ratio_estimate: Option<f64>) -> f64 {
        match nlos_ratio_estimate {
            Some(r) if r <= self.ratio_threshold => self.large_alpha,
            _ => self.small_alpha,
        }
    }
}

/// `Alpha2Policy` with the default thresholds.
pub fn choose_alpha2(nlos_ratio_estimate: Option<f64>) -> f64 {
    Alpha2Policy::default().choose(nlos_ratio_estimate)
}

/// Initial sensor estimates: Gaussian perturbation of the true positions
/// when ground truth is known, otherwise a Gaussian cloud around the anchor
/// centroid (the jitter also breaks the symmetry that would otherwise pin
/// coincident sensors together).
pub fn initial_estimates(
    net: &Network,
    init_std: f64,
    seed: u64,
) -> Result<EstimateState, SolveError> {
    if !init_std.is_finite() || init_std < 0.0 {
        return Err(SolveError::BadConfig(format!(
            "init_std must be >= 0, got {init_std}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gauss = Normal::new(0.0, init_std).expect("validated std");
    let centers: Vec<Position> = match net.true_sensor_positions() {
        Some(truth) => truth.to_vec(),
        None => {
            let anchors = net.anchor_positions();
            let c = if anchors.is_empty() {
                Position::new(0.0, 0.0)
            } else {
                let n = anchors.len() as f64;
                Position::new(
                    anchors.iter().map(|p| p.x).sum::<f64>() / n,
                    anchors.iter().map(|p| p.y).sum::<f64>() / n,
                )
            };
            vec![c; net.num_sensors()]
        }
    };
    let positions = centers
        .into_iter()
        .map(|c| Position::new(c.x + gauss.sample(&mut rng), c.y + gauss.sample(&mut rng)))
        .collect();
    Ok(EstimateState::new(positions))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measurement::{synthesize, LinkMeasurement, NoiseModel};
    use crate::network::{build_topology, Edge};
    use approx::assert_relative_eq;

    fn pos(x: f64, y: f64) -> Position {
        Position::new(x, y)
    }

    fn exact_measurements(net: &Network) -> MeasurementSet {
        MeasurementSet::from_entries(net.edges().map(|e| {
            let d = distance(
                net.true_position(e.lo()).unwrap(),
                net.true_position(e.hi()).unwrap(),
            );
            (e, LinkMeasurement { range: d, label: None })
        }))
    }

    #[test]
    fn node_update_fixed_point_when_gradients_vanish() {
        // Sensor inside the measured ball of its only neighbor: no movement.
        let net = build_topology(&[pos(1.0, 0.0)], &[pos(0.0, 0.0)], f64::INFINITY).unwrap();
        let ms = MeasurementSet::from_entries([(
            Edge::new(NodeId(0), NodeId(1)).unwrap(),
            LinkMeasurement { range: 5.0, label: None },
        )]);
        let views = BTreeMap::from([(NodeId(1), pos(0.0, 0.0))]);
        let cfg = StageConfig::stage1_defaults();
        let out = node_update(NodeId(0), &views, pos(1.0, 0.0), &ms, &cfg, 0.5).unwrap();
        assert_eq!(out, pos(1.0, 0.0));
    }

    #[test]
    fn node_update_hand_step() {
        // Anchor at origin, sensor at (2,0), r = 1, relaxed Huber K = 1:
        // u = 1 hits the linear branch, grad = (2, 0), update = (1.92, 0).
        let net = build_topology(&[pos(2.0, 0.0)], &[pos(0.0, 0.0)], f64::INFINITY).unwrap();
        let ms = MeasurementSet::from_entries([(
            Edge::new(NodeId(0), NodeId(1)).unwrap(),
            LinkMeasurement { range: 1.0, label: None },
        )]);
        let views = BTreeMap::from([(NodeId(1), pos(0.0, 0.0))]);
        let cfg = StageConfig {
            loss_kind: LossKind::RelaxedHuber,
            step_size: 0.04,
            knee_scale: 2.0,
            max_rounds: 50,
            move_tol: 0.0,
        };
        let out = node_update(NodeId(0), &views, pos(2.0, 0.0), &ms, &cfg, 0.5).unwrap();
        assert_relative_eq!(out.x, 1.92, epsilon = 1e-12);
        assert_relative_eq!(out.y, 0.0);
        let _ = net;
    }

    #[test]
    fn node_update_missing_view_errors() {
        let ms = MeasurementSet::from_entries([(
            Edge::new(NodeId(0), NodeId(1)).unwrap(),
            LinkMeasurement { range: 1.0, label: None },
        )]);
        let views = BTreeMap::new();
        let cfg = StageConfig::stage1_defaults();
        assert_eq!(
            node_update(NodeId(0), &views, pos(2.0, 0.0), &ms, &cfg, 0.5),
            Err(SolveError::MissingNeighborView { node: 0, neighbor: 1 })
        );
    }

    fn trilateration_fixture() -> (Network, MeasurementSet) {
        // One sensor at (4, 3) with three surrounding anchors, exact ranges.
        let net = build_topology(
            &[pos(4.0, 3.0)],
            &[pos(0.0, 0.0), pos(10.0, 0.0), pos(5.0, 9.0)],
            f64::INFINITY,
        )
        .unwrap();
        let ms = exact_measurements(&net);
        (net, ms)
    }

    #[test]
    fn run_stage_converges_on_noise_free_triangle() {
        let (net, ms) = trilateration_fixture();
        let init = EstimateState::new(vec![pos(4.5, 2.5)]);
        let cfg = StageConfig {
            loss_kind: LossKind::RelaxedHuber,
            step_size: 0.02,
            knee_scale: 2.0,
            max_rounds: 5000,
            move_tol: 0.0,
        };
        let (out, trace) = run_stage(&net, &ms, &init, &cfg, 0.5, Schedule::Jacobi).unwrap();
        assert!(
            distance(out.positions[0], pos(4.0, 3.0)) < 1e-3,
            "ended at {:?} after {} rounds",
            out.positions[0],
            trace.rounds
        );
    }

    #[test]
    fn run_stage_infinite_tolerance_stops_after_one_round() {
        let (net, ms) = trilateration_fixture();
        let init = EstimateState::new(vec![pos(6.0, 1.0)]);
        let cfg = StageConfig {
            move_tol: f64::INFINITY,
            ..StageConfig::stage1_defaults()
        };
        let (_, trace) = run_stage(&net, &ms, &init, &cfg, 0.5, Schedule::Jacobi).unwrap();
        assert_eq!(trace.rounds, 1);
        assert_eq!(trace.termination, Termination::Converged);
    }

    #[test]
    fn run_stage_exhausts_round_budget() {
        let (net, ms) = trilateration_fixture();
        let init = EstimateState::new(vec![pos(6.0, 1.0)]);
        let cfg = StageConfig {
            max_rounds: 50,
            move_tol: 0.0,
            ..StageConfig::stage1_defaults()
        };
        let (_, trace) = run_stage(&net, &ms, &init, &cfg, 0.5, Schedule::Jacobi).unwrap();
        assert_eq!(trace.rounds, 50);
        assert_eq!(trace.termination, Termination::MaxRounds);
        assert_eq!(trace.cost_per_round.len(), 50);
        assert_eq!(trace.max_move_per_round.len(), 50);
    }

    #[test]
    fn run_stage_detects_divergence_and_keeps_partial_trace() {
        let (net, ms) = trilateration_fixture();
        let init = EstimateState::new(vec![pos(6.0, 1.0)]);
        // An absurd step size on the NLS cost blows up quickly.
        let cfg = StageConfig {
            loss_kind: LossKind::Nls,
            step_size: 1e4,
            knee_scale: 2.0,
            max_rounds: 1000,
            move_tol: 0.0,
        };
        match run_stage(&net, &ms, &init, &cfg, 0.5, Schedule::Jacobi) {
            Err(SolveError::Diverged(d)) => {
                assert_eq!(d.trace.termination, Termination::Diverged);
                assert!(d.trace.rounds > 0);
                assert_eq!(d.trace.cost_per_round.len(), d.trace.rounds);
            }
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn stationary_when_inside_all_balls() {
        // Every sensor strictly inside all neighbours' measured balls:
        // relaxed Huber gradient vanishes everywhere, so nothing moves.
        let net = build_topology(
            &[pos(4.0, 4.0), pos(6.0, 5.0)],
            &[pos(0.0, 0.0), pos(10.0, 10.0)],
            f64::INFINITY,
        )
        .unwrap();
        let ms = MeasurementSet::from_entries(net.edges().map(|e| {
            let d = distance(
                net.true_position(e.lo()).unwrap(),
                net.true_position(e.hi()).unwrap(),
            );
            (e, LinkMeasurement { range: d + 5.0, label: None })
        }));
        let init = EstimateState::new(vec![pos(4.0, 4.0), pos(6.0, 5.0)]);
        let cfg = StageConfig::stage1_defaults();
        let (out, trace) = run_stage(&net, &ms, &init, &cfg, 0.5, Schedule::Jacobi).unwrap();
        assert_eq!(out.positions, init.positions);
        assert_eq!(trace.termination, Termination::Converged);
        assert_eq!(trace.rounds, 1);
    }

    #[test]
    fn two_stage_with_zero_round_refinement_is_stage_one() {
        let (net, ms) = trilateration_fixture();
        let init = EstimateState::new(vec![pos(6.0, 1.0)]);
        let stage1 = StageConfig::stage1_defaults();
        let stage2 = StageConfig {
            max_rounds: 0,
            ..StageConfig::stage2_defaults()
        };
        let (solo, _) = run_stage(&net, &ms, &init, &stage1, 0.5, Schedule::Jacobi).unwrap();
        let (out, _, trace2) =
            solve_two_stage(&net, &ms, &init, &stage1, &stage2, 0.5, Schedule::Jacobi).unwrap();
        assert_eq!(out, solo);
        assert_eq!(trace2.rounds, 0);
    }

    #[test]
    fn two_stage_noise_free_reaches_truth_and_stage_two_holds_still() {
        let (net, ms) = trilateration_fixture();
        let init = EstimateState::new(vec![pos(4.3, 3.2)]);
        let stage1 = StageConfig {
            max_rounds: 3000,
            ..StageConfig::stage1_defaults()
        };
        let stage2 = StageConfig {
            max_rounds: 3000,
            move_tol: 1e-7,
            ..StageConfig::stage2_defaults()
        };
        let (out, _, trace2) =
            solve_two_stage(&net, &ms, &init, &stage1, &stage2, 0.5, Schedule::Jacobi).unwrap();
        assert!(distance(out.positions[0], pos(4.0, 3.0)) < 1e-3);
        // Stage two only polishes: per-round movement stayed tiny.
        assert!(trace2
            .max_move_per_round
            .iter()
            .all(|&m| m < 1e-1));
    }

    #[test]
    fn alpha2_policy_values() {
        assert_eq!(choose_alpha2(None), 0.1);
        assert_eq!(choose_alpha2(Some(0.05)), 1.5);
        assert_eq!(choose_alpha2(Some(0.95)), 0.1);
        let custom = Alpha2Policy {
            ratio_threshold: 0.2,
            small_alpha: 0.05,
            large_alpha: 2.0,
        };
        assert_eq!(custom.choose(Some(0.1)), 2.0);
        assert_eq!(custom.choose(Some(0.3)), 0.05);
    }

    #[test]
    fn locality_ignores_non_neighbor_perturbations() {
        // 3 sensors in a line topology 0-1-2 plus an anchor on node 1's side;
        // node 0 never sees node 2, so perturbing node 2's view leaves node
        // 0's update bit-identical.
        let sensors = [pos(0.0, 0.0), pos(3.0, 0.0), pos(6.0, 0.0)];
        let anchors = [pos(3.0, 4.0)];
        let net = build_topology(&sensors, &anchors, 4.5).unwrap();
        assert!(net.has_edge(Edge::new(NodeId(0), NodeId(1)).unwrap()));
        assert!(!net.has_edge(Edge::new(NodeId(0), NodeId(2)).unwrap()));
        let ms = exact_measurements(&net);
        let cfg = StageConfig::stage1_defaults();

        let local = pos(0.5, 0.2);
        let views = BTreeMap::from([(NodeId(1), pos(3.1, 0.1)), (NodeId(3), pos(3.0, 4.0))]);
        let base = node_update(NodeId(0), &views, local, &ms, &cfg, 0.5).unwrap();

        let mut poisoned = views.clone();
        poisoned.insert(NodeId(2), pos(-999.0, 999.0));
        let out = node_update(NodeId(0), &poisoned, local, &ms, &cfg, 0.5).unwrap();
        assert_eq!(base, out);
    }

    #[test]
    fn jacobi_is_permutation_invariant() {
        use rand::seq::SliceRandom;

        let sensors = [pos(2.0, 3.0), pos(7.0, 1.0), pos(5.0, 8.0), pos(1.0, 6.0)];
        let anchors = [pos(0.0, 0.0), pos(10.0, 0.0), pos(10.0, 10.0), pos(0.0, 10.0)];
        let net = build_topology(&sensors, &anchors, f64::INFINITY).unwrap();
        let model = NoiseModel::new(0.5, 0.5, 10.0).unwrap();
        let ms = synthesize(&net, &model, 9).unwrap();
        let init = initial_estimates(&net, 3.0, 21).unwrap();
        let cfg = StageConfig::stage1_defaults();
        let (out, _) = run_stage(&net, &ms, &init, &cfg, 0.5, Schedule::Jacobi).unwrap();

        // Relabel sensors by a random permutation; anchors keep their ids.
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let mut perm: Vec<usize> = (0..sensors.len()).collect();
        perm.shuffle(&mut rng);
        let relabel = |id: NodeId| -> NodeId {
            if id.0 < sensors.len() {
                NodeId(perm[id.0])
            } else {
                id
            }
        };
        let mut sensors2 = [pos(0.0, 0.0); 4];
        for (old, &new) in perm.iter().enumerate() {
            sensors2[new] = sensors[old];
        }
        let net2 = Network::new(
            4,
            4,
            anchors.to_vec(),
            Some(sensors2.to_vec()),
            net.edges()
                .map(|e| Edge::new(relabel(e.lo()), relabel(e.hi())).unwrap()),
        )
        .unwrap();
        let ms2 = MeasurementSet::from_entries(
            ms.iter()
                .map(|(e, m)| (Edge::new(relabel(e.lo()), relabel(e.hi())).unwrap(), *m)),
        );
        let mut init2 = init.clone();
        for (old, &new) in perm.iter().enumerate() {
            init2.positions[new] = init.positions[old];
        }
        let (out2, _) = run_stage(&net2, &ms2, &init2, &cfg, 0.5, Schedule::Jacobi).unwrap();
        for (old, &new) in perm.iter().enumerate() {
            assert_eq!(out.positions[old], out2.positions[new], "sensor {old}");
        }
    }

    #[test]
    fn small_step_jacobi_cost_is_non_increasing() {
        // Convex stage-one objective with a conservative step: the cost
        // trajectory must not increase on random instances.
        let anchors = [pos(0.0, 0.0), pos(10.0, 0.0), pos(10.0, 10.0), pos(0.0, 10.0)];
        for seed in 0..20u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(3_000 + seed);
            let gauss = Normal::new(5.0, 2.5).unwrap();
            let sensors: Vec<Position> = (0..10)
                .map(|_| pos(gauss.sample(&mut rng), gauss.sample(&mut rng)))
                .collect();
            let net = build_topology(&sensors, &anchors, f64::INFINITY).unwrap();
            let model = NoiseModel::new(0.5, 0.5, 10.0).unwrap();
            let ms = synthesize(&net, &model, 7_000 + seed).unwrap();
            let init = initial_estimates(&net, 10.0, 9_000 + seed).unwrap();
            let cfg = StageConfig {
                step_size: 0.004,
                max_rounds: 60,
                ..StageConfig::stage1_defaults()
            };
            let (_, trace) = run_stage(&net, &ms, &init, &cfg, 0.5, Schedule::Jacobi).unwrap();
            for w in trace.cost_per_round.windows(2) {
                assert!(
                    w[1] <= w[0] + 1e-9,
                    "cost increased {} -> {} (seed {seed})",
                    w[0],
                    w[1]
                );
            }
        }
    }

    #[test]
    fn identical_inputs_produce_identical_traces() {
        let (net, ms) = trilateration_fixture();
        let init = EstimateState::new(vec![pos(6.0, 1.0)]);
        for schedule in [Schedule::Jacobi, Schedule::GaussSeidel] {
            let cfg = StageConfig::stage1_defaults();
            let a = run_stage(&net, &ms, &init, &cfg, 0.5, schedule).unwrap();
            let b = run_stage(&net, &ms, &init, &cfg, 0.5, schedule).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn initial_estimates_centroid_fallback() {
        let net = Network::new(
            2,
            2,
            vec![pos(0.0, 0.0), pos(10.0, 0.0)],
            None,
            [],
        )
        .unwrap();
        let state = initial_estimates(&net, 0.0, 1).unwrap();
        assert_eq!(state.positions, vec![pos(5.0, 0.0), pos(5.0, 0.0)]);
        let jittered = initial_estimates(&net, 2.0, 1).unwrap();
        assert_ne!(jittered.positions[0], jittered.positions[1]);
    }

    #[test]
    fn config_validation() {
        let mut cfg = StageConfig::stage1_defaults();
        cfg.step_size = 0.0;
        assert!(cfg.validate().is_err());
        let mut cfg = StageConfig::stage1_defaults();
        cfg.knee_scale = -1.0;
        assert!(cfg.validate().is_err());
        let mut cfg = StageConfig::stage1_defaults().with_kind(LossKind::Nls);
        cfg.knee_scale = -1.0;
        // NLS ignores the knee entirely.
        assert!(cfg.validate().is_ok());
        cfg.move_tol = -0.5;
        assert!(cfg.validate().is_err());
    }
}
