//! Comparison solvers: gradient descent on the relaxed NLS and raw Huber
//! costs (same engine, different loss), cooperative POCS with averaged ball
//! projections, and an oracle lower bound that drops every NLOS-labeled link
//! before solving.

use crate::loss::{network_cost, LossKind, LossParams};
use crate::measurement::{LinkLabel, MeasurementError, MeasurementSet};
use crate::network::{distance, Network, NodeId, Position, DIVERGENCE_LIMIT_M};
use crate::solver::{
    run_stage, sum_sorted, EstimateState, Schedule, SolveError, SolveTrace, StageConfig,
    Termination,
};

/// Relaxed-NLS descent: `run_stage` with the hinge-squared loss, every other
/// parameter taken from `cfg`.
pub fn solve_relaxed_nls(
    net: &Network,
    ms: &MeasurementSet,
    init: &EstimateState,
    cfg: &StageConfig,
    sigma_n: f64,
    schedule: Schedule,
) -> Result<(EstimateState, SolveTrace), SolveError> {
    run_stage(net, ms, init, &cfg.with_kind(LossKind::RelaxedNls), sigma_n, schedule)
}

/// Raw Huber descent from the given (possibly poor) initialization; without
/// the convex stage in front it is prone to bad stationary points.
pub fn solve_raw_huber(
    net: &Network,
    ms: &MeasurementSet,
    init: &EstimateState,
    cfg: &StageConfig,
    sigma_n: f64,
    schedule: Schedule,
) -> Result<(EstimateState, SolveTrace), SolveError> {
    run_stage(net, ms, init, &cfg.with_kind(LossKind::Huber), sigma_n, schedule)
}

/// Projection of `point` onto the closed ball around `center`. Negative
/// radii collapse the ball to its center.
pub fn project_onto_ball(point: Position, center: Position, radius: f64) -> Position {
    let r = radius.max(0.0);
    let d = distance(point, center);
    if d <= r {
        point
    } else {
        let s = r / d;
        Position::new(center.x + s * (point.x - center.x), center.y + s * (point.y - center.y))
    }
}

/// Per-round relaxation for POCS: the new estimate is
/// `lambda * x + (1 - lambda) * averaged_projection`, so `lambda = 0` is the
/// full averaged projection step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PocsStepPolicy {
    Constant(f64),
}

impl Default for PocsStepPolicy {
    fn default() -> Self {
        PocsStepPolicy::Constant(0.0)
    }
}

impl PocsStepPolicy {
    fn lambda(&self, _round: usize) -> f64 {
        match self {
            PocsStepPolicy::Constant(l) => *l,
        }
    }
}

/// Cooperative POCS: each sensor moves toward the average of its projections
/// onto its neighbours' measured balls, projecting only when it lies outside
/// a ball. Rounds read a frozen snapshot (parallel projections). The trace
/// cost column records the hinge-squared feasibility gap.
pub fn solve_pocs(
    net: &Network,
    ms: &MeasurementSet,
    init: &EstimateState,
    max_rounds: usize,
    policy: PocsStepPolicy,
) -> Result<(EstimateState, SolveTrace), SolveError> {
    if init.positions.len() != net.num_sensors() {
        return Err(SolveError::BadInit {
            got: init.positions.len(),
            expected: net.num_sensors(),
        });
    }
    let n = net.num_sensors();
    let mut adj: Vec<Vec<(NodeId, f64)>> = vec![Vec::new(); n];
    for edge in net.edges() {
        let m = ms.get(edge).ok_or(crate::loss::LossError::MissingMeasurement(
            edge.lo().0,
            edge.hi().0,
        ))?;
        if edge.lo().0 < n {
            adj[edge.lo().0].push((edge.hi(), m.range));
        }
        if edge.hi().0 < n {
            adj[edge.hi().0].push((edge.lo(), m.range));
        }
    }
    let gap_params = LossParams::new(1.0).expect("static knee");

    let mut positions = init.positions.clone();
    let mut trace = SolveTrace::empty();
    let mut scratch: Vec<[f64; 2]> = Vec::new();

    for round in 0..max_rounds {
        let prev = positions.clone();
        let lambda = policy.lambda(round);
        for i in 0..n {
            if adj[i].is_empty() {
                continue;
            }
            scratch.clear();
            for &(j, r) in &adj[i] {
                let center = net.node_position(j, &prev);
                let p = project_onto_ball(prev[i], center, r);
                scratch.push([p.x, p.y]);
            }
            let count = scratch.len() as f64;
            let sum = sum_sorted(&mut scratch);
            let avg = Position::new(sum[0] / count, sum[1] / count);
            positions[i] = Position::new(
                lambda * prev[i].x + (1.0 - lambda) * avg.x,
                lambda * prev[i].y + (1.0 - lambda) * avg.y,
            );
        }

        let mut max_move = 0.0f64;
        let mut diverged = false;
        for i in 0..n {
            let d = distance(positions[i], prev[i]);
            if d.is_nan() || !positions[i].is_finite() || positions[i].x.abs() > DIVERGENCE_LIMIT_M
                || positions[i].y.abs() > DIVERGENCE_LIMIT_M
            {
                diverged = true;
            }
            max_move = max_move.max(d);
        }
        let gap = network_cost(LossKind::RelaxedNls, &gap_params, &positions, net, ms)?;
        trace.record_round(gap, max_move);

        if diverged {
            trace.termination = Termination::Diverged;
            return Err(SolveError::Diverged(Box::new(crate::solver::DivergedSolve {
                state: EstimateState {
                    round: init.round + trace.rounds,
                    positions,
                },
                trace,
            })));
        }
        if max_move == 0.0 {
            trace.termination = Termination::Converged;
            break;
        }
    }

    let rounds = trace.rounds;
    Ok((
        EstimateState {
            round: init.round + rounds,
            positions,
        },
        trace,
    ))
}

/// Lower-bound solver with perfect NLOS knowledge: every NLOS-labeled link is
/// discarded, a POCS pass over the surviving LOS links produces the starting
/// point, and plain NLS descent refines it. Sensors left without an anchor
/// connection are reported in the trace warnings and simply stay wherever the
/// surviving links put them.
pub fn solve_oracle_los(
    net: &Network,
    ms: &MeasurementSet,
    init: &EstimateState,
    cfg: &StageConfig,
    sigma_n: f64,
    schedule: Schedule,
) -> Result<(EstimateState, SolveTrace), SolveError> {
    if !ms.fully_labeled() {
        return Err(SolveError::Measurement(MeasurementError::LabelsRequired));
    }
    let los_entries: Vec<_> = ms
        .iter()
        .filter(|(_, m)| m.label == Some(LinkLabel::Los))
        .map(|(e, m)| (e, *m))
        .collect();
    let los_net = net.with_edges(los_entries.iter().map(|(e, _)| *e))?;
    let los_ms = MeasurementSet::from_entries(los_entries);

    let unreached = sensors_without_anchor_path(&los_net);

    let (pocs_out, _) = solve_pocs(
        &los_net,
        &los_ms,
        init,
        cfg.max_rounds,
        PocsStepPolicy::default(),
    )?;
    let (out, mut trace) = run_stage(
        &los_net,
        &los_ms,
        &pocs_out,
        &cfg.with_kind(LossKind::Nls),
        sigma_n,
        schedule,
    )?;
    if !unreached.is_empty() {
        trace.warnings.push(format!(
            "{} sensor(s) have no LOS path to any anchor: {:?}",
            unreached.len(),
            unreached
        ));
    }
    Ok((out, trace))
}

/// Sensors with no path to any anchor in the given edge set.
fn sensors_without_anchor_path(net: &Network) -> Vec<usize> {
    let total = net.node_count();
    let mut reached = vec![false; total];
    let mut queue: Vec<usize> = (net.num_sensors()..total).collect();
    for &a in &queue {
        reached[a] = true;
    }
    while let Some(v) = queue.pop() {
        for &j in net.neighbors(NodeId(v)).expect("valid node") {
            if !reached[j.0] {
                reached[j.0] = true;
                queue.push(j.0);
            }
        }
    }
    (0..net.num_sensors()).filter(|&i| !reached[i]).collect()
}
