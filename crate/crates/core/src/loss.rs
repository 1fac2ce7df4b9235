//! The four per-link cost functions driving every solver: plain nonlinear
//! least squares, its hinge-style convex relaxation, the Huber loss, and the
//! convex relaxation of the Huber loss (zero inside the measured ball,
//! quadratic in a band of width K beyond it, linear after that). Each comes
//! with its analytic gradient with respect to one endpoint.

use thiserror::Error;

use crate::measurement::MeasurementSet;
use crate::network::{distance, Network, Position};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LossError {
    #[error("Huber knee must be finite and > 0, got {0}")]
    BadKnee(f64),
    #[error("estimate vector has {got} positions, expected {expected}")]
    DimensionMismatch { got: usize, expected: usize },
    #[error("no measurement for edge ({0}, {1})")]
    MissingMeasurement(usize, usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Nls,
    RelaxedNls,
    Huber,
    RelaxedHuber,
}

impl LossKind {
    /// Whether the loss reads the Huber knee at all.
    pub fn uses_knee(&self) -> bool {
        matches!(self, LossKind::Huber | LossKind::RelaxedHuber)
    }
}

/// Huber knee `K`, usually derived as `K = alpha * sigma_n`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossParams {
    knee: f64,
}

impl LossParams {
    pub fn new(knee: f64) -> Result<Self, LossError> {
        if !knee.is_finite() || knee <= 0.0 {
            return Err(LossError::BadKnee(knee));
        }
        Ok(Self { knee })
    }

    pub fn from_scale(knee_scale: f64, sigma_n: f64) -> Result<Self, LossError> {
        Self::new(knee_scale * sigma_n)
    }

    pub fn knee(&self) -> f64 {
        self.knee
    }
}

/// Link residual `u = ||xi - xj|| - r`.
pub fn residual(xi: Position, xj: Position, r: f64) -> f64 {
    distance(xi, xj) - r
}

/// Per-link cost as a function of the residual `u`. The inside-ball branch
/// of the relaxed kinds is exactly `u <= 0`.
pub fn link_cost(kind: LossKind, params: &LossParams, u: f64) -> f64 {
    let k = params.knee;
    match kind {
        LossKind::Nls => u * u,
        LossKind::RelaxedNls => {
            if u <= 0.0 {
                0.0
            } else {
                u * u
            }
        }
        LossKind::Huber => {
            if u.abs() < k {
                u * u
            } else {
                2.0 * k * u.abs() - k * k
            }
        }
        LossKind::RelaxedHuber => {
            if u <= 0.0 {
                0.0
            } else if u < k {
                u * u
            } else {
                2.0 * k * u - k * k
            }
        }
    }
}

/// Scalar factor multiplying the unit vector (xi - xj)/||xi - xj|| in the
/// gradient with respect to xi.
fn grad_scale(kind: LossKind, k: f64, u: f64) -> f64 {
    match kind {
        LossKind::Nls => 2.0 * u,
        LossKind::RelaxedNls => {
            if u <= 0.0 {
                0.0
            } else {
                2.0 * u
            }
        }
        // The linear branch carries sign(u) so it descends on both sides;
        // at u = 0 the quadratic branch applies (K > 0), so signum(0) is
        // never consulted.
        LossKind::Huber => {
            if u.abs() < k {
                2.0 * u
            } else {
                2.0 * k * u.signum()
            }
        }
        LossKind::RelaxedHuber => {
            if u <= 0.0 {
                0.0
            } else if u < k {
                2.0 * u
            } else {
                2.0 * k
            }
        }
    }
}

/// Gradient of the link cost with respect to `xi`. Coincident endpoints get
/// the zero subgradient.
pub fn link_grad(kind: LossKind, params: &LossParams, xi: Position, xj: Position, r: f64) -> [f64; 2] {
    let dx = xi.x - xj.x;
    let dy = xi.y - xj.y;
    let dist = (dx * dx + dy * dy).sqrt();
    if dist == 0.0 {
        return [0.0, 0.0];
    }
    let s = grad_scale(kind, params.knee, dist - r) / dist;
    [s * dx, s * dy]
}

/// Total cost over all network edges, using anchor positions where a node is
/// an anchor and `sensor_estimates` elsewhere.
pub fn network_cost(
    kind: LossKind,
    params: &LossParams,
    sensor_estimates: &[Position],
    net: &Network,
    ms: &MeasurementSet,
) -> Result<f64, LossError> {
    if sensor_estimates.len() != net.num_sensors() {
        return Err(LossError::DimensionMismatch {
            got: sensor_estimates.len(),
            expected: net.num_sensors(),
        });
    }
    let mut total = 0.0;
    for edge in net.edges() {
        let m = ms
            .get(edge)
            .ok_or(LossError::MissingMeasurement(edge.lo().0, edge.hi().0))?;
        let xi = net.node_position(edge.lo(), sensor_estimates);
        let xj = net.node_position(edge.hi(), sensor_estimates);
        total += link_cost(kind, params, residual(xi, xj, m.range));
    }
    Ok(total)
}
