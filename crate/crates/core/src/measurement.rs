//! Range measurement synthesis: Gaussian noise on every link, plus an
//! additive exponential bias on links drawn NLOS. Ground-truth labels ride
//! along for the oracle baseline and evaluation only; the main solvers never
//! look at them.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Bernoulli, Distribution, Exp, Normal};
use thiserror::Error;

use crate::network::{Edge, Network};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MeasurementError {
    #[error("noise std dev must be finite and >= 0, got {0}")]
    BadSigma(f64),
    #[error("NLOS probability must lie in [0, 1], got {0}")]
    BadNlosProb(f64),
    #[error("bias mean must be finite and > 0, got {0}")]
    BadBiasMean(f64),
    #[error("network has no true sensor positions; cannot synthesize ranges")]
    MissingTruePositions,
    #[error("measurement set is empty")]
    EmptySet,
    #[error("measurement set has unlabeled links; ground-truth labels required")]
    LabelsRequired,
}

/// Ground-truth propagation condition of a link.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LinkLabel {
    Los,
    Nlos,
}

/// Noise law for synthetic ranges: zero-mean Gaussian of std `sigma_n` on
/// every link, exponential bias of mean `bias_mean` added with probability
/// `nlos_prob`. `sigma_n = 0` expresses the noiseless limit used in
/// recovery tests.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct NoiseModel {
    pub sigma_n: f64,
    pub nlos_prob: f64,
    pub bias_mean: f64,
}

impl NoiseModel {
    pub fn new(sigma_n: f64, nlos_prob: f64, bias_mean: f64) -> Result<Self, MeasurementError> {
        let model = Self {
            sigma_n,
            nlos_prob,
            bias_mean,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<(), MeasurementError> {
        if !self.sigma_n.is_finite() || self.sigma_n < 0.0 {
            return Err(MeasurementError::BadSigma(self.sigma_n));
        }
        if !self.nlos_prob.is_finite() || !(0.0..=1.0).contains(&self.nlos_prob) {
            return Err(MeasurementError::BadNlosProb(self.nlos_prob));
        }
        if !self.bias_mean.is_finite() || self.bias_mean <= 0.0 {
            return Err(MeasurementError::BadBiasMean(self.bias_mean));
        }
        Ok(())
    }
}

/// One measured link: the range and, when known, the true LOS/NLOS label.
/// Ranges may be negative (noise can exceed a short true distance); they are
/// deliberately not clamped.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkMeasurement {
    pub range: f64,
    pub label: Option<LinkLabel>,
}

/// One range per network edge, keyed and iterated in sorted edge order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MeasurementSet {
    entries: BTreeMap<Edge, LinkMeasurement>,
}

impl MeasurementSet {
    pub fn from_entries(entries: impl IntoIterator<Item = (Edge, LinkMeasurement)>) -> Self {
        Self {
            entries: entries.into_iter().collect(),
        }
    }

    pub fn get(&self, edge: Edge) -> Option<&LinkMeasurement> {
        self.entries.get(&edge)
    }

    pub fn iter(&self) -> impl Iterator<Item = (Edge, &LinkMeasurement)> {
        self.entries.iter().map(|(e, m)| (*e, m))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn fully_labeled(&self) -> bool {
        self.entries.values().all(|m| m.label.is_some())
    }

    /// FNV-1a hash over the canonical (sorted) byte encoding of all entries.
    /// Used by the Monte-Carlo harness to assert that paired methods saw
    /// bit-identical measurements.
    pub fn content_hash(&self) -> u64 {
        const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
        const PRIME: u64 = 0x0000_0100_0000_01b3;
        let mut h = OFFSET;
        let mut eat = |bytes: &[u8]| {
            for &b in bytes {
                h ^= u64::from(b);
                h = h.wrapping_mul(PRIME);
            }
        };
        for (e, m) in &self.entries {
            eat(&(e.lo().0 as u64).to_le_bytes());
            eat(&(e.hi().0 as u64).to_le_bytes());
            eat(&m.range.to_bits().to_le_bytes());
            eat(&[match m.label {
                None => 0,
                Some(LinkLabel::Los) => 1,
                Some(LinkLabel::Nlos) => 2,
            }]);
        }
        h
    }
}

/// Draws one measurement per network edge: `r = d + n` on LOS links and
/// `r = d + b + n` on NLOS links, with `n ~ Normal(0, sigma_n^2)` and
/// `b ~ Exp(mean = bias_mean)`. Deterministic given the seed; edges are
/// visited in sorted order so the draw sequence is reproducible.
pub fn synthesize(
    net: &Network,
    model: &NoiseModel,
    seed: u64,
) -> Result<MeasurementSet, MeasurementError> {
    model.validate()?;
    if net.num_sensors() > 0 && net.true_sensor_positions().is_none() {
        return Err(MeasurementError::MissingTruePositions);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let label_draw = Bernoulli::new(model.nlos_prob).expect("validated probability");
    let noise = Normal::new(0.0, model.sigma_n).expect("validated sigma");
    let bias = Exp::new(1.0 / model.bias_mean).expect("validated bias mean");

    let mut entries = BTreeMap::new();
    for edge in net.edges() {
        let pi = net.true_position(edge.lo()).expect("validated truth");
        let pj = net.true_position(edge.hi()).expect("validated truth");
        let d = crate::network::distance(pi, pj);
        let nlos = label_draw.sample(&mut rng);
        let n = noise.sample(&mut rng);
        let range = if nlos {
            d + bias.sample(&mut rng) + n
        } else {
            d + n
        };
        entries.insert(
            edge,
            LinkMeasurement {
                range,
                label: Some(if nlos { LinkLabel::Nlos } else { LinkLabel::Los }),
            },
        );
    }
    Ok(MeasurementSet { entries })
}

/// Fraction of NLOS links. Requires a non-empty, fully labeled set.
pub fn nlos_ratio(ms: &MeasurementSet) -> Result<f64, MeasurementError> {
    if ms.is_empty() {
        return Err(MeasurementError::EmptySet);
    }
    let mut nlos = 0usize;
    for (_, m) in ms.iter() {
        match m.label {
            Some(LinkLabel::Nlos) => nlos += 1,
            Some(LinkLabel::Los) => {}
            None => return Err(MeasurementError::LabelsRequired),
        }
    }
    Ok(nlos as f64 / ms.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{build_topology, distance, NodeId, Position};

    fn grid_net(n: usize) -> Network {
        // n sensors on a line plus two anchors, fully connected.
        let sensors: Vec<Position> = (0..n).map(|i| Position::new(i as f64, 0.0)).collect();
        let anchors = vec![Position::new(0.0, 5.0), Position::new(3.0, 5.0)];
        build_topology(&sensors, &anchors, f64::INFINITY).unwrap()
    }

    #[test]
    fn noiseless_limit_reproduces_distances() {
        let net = grid_net(4);
        let model = NoiseModel::new(0.0, 0.0, 10.0).unwrap();
        let ms = synthesize(&net, &model, 7).unwrap();
        for (e, m) in ms.iter() {
            let d = distance(
                net.true_position(e.lo()).unwrap(),
                net.true_position(e.hi()).unwrap(),
            );
            assert_eq!(m.range, d);
            assert_eq!(m.label, Some(LinkLabel::Los));
        }
    }

    #[test]
    fn all_nlos_bias_is_nonnegative() {
        let net = grid_net(4);
        let model = NoiseModel::new(0.0, 1.0, 10.0).unwrap();
        let ms = synthesize(&net, &model, 3).unwrap();
        for (e, m) in ms.iter() {
            let d = distance(
                net.true_position(e.lo()).unwrap(),
                net.true_position(e.hi()).unwrap(),
            );
            assert!(m.range - d >= 0.0);
            assert_eq!(m.label, Some(LinkLabel::Nlos));
        }
    }

    #[test]
    fn mean_excess_matches_half_bias_mean_over_redraws() {
        // Two nodes at distance 5; P_N = 0.5, sigma = 0.5, gamma = 10.
        // E[r - d] = P_N * gamma; check within 3 standard errors.
        let sensors = vec![Position::new(0.0, 0.0)];
        let anchors = vec![Position::new(5.0, 0.0)];
        let net = build_topology(&sensors, &anchors, f64::INFINITY).unwrap();
        let gamma = 10.0;
        let sigma = 0.5;
        let p = 0.5;
        let model = NoiseModel::new(sigma, p, gamma).unwrap();

        let redraws = 100_000;
        let mut sum = 0.0;
        let mut sumsq = 0.0;
        for k in 0..redraws {
            let ms = synthesize(&net, &model, 1_000_000 + k).unwrap();
            let (_, m) = ms.iter().next().unwrap();
            let excess = m.range - 5.0;
            sum += excess;
            sumsq += excess * excess;
        }
        let n = redraws as f64;
        let mean = sum / n;
        let var = sumsq / n - mean * mean;
        let se = (var / n).sqrt();
        assert!(
            (mean - p * gamma).abs() < 3.0 * se,
            "mean excess {mean} vs expected {} (se {se})",
            p * gamma
        );
    }

    #[test]
    fn determinism_same_seed_bit_identical() {
        let net = grid_net(6);
        let model = NoiseModel::new(0.5, 0.5, 10.0).unwrap();
        let a = synthesize(&net, &model, 42).unwrap();
        let b = synthesize(&net, &model, 42).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.content_hash(), b.content_hash());
        let c = synthesize(&net, &model, 43).unwrap();
        assert_ne!(a.content_hash(), c.content_hash());
    }

    #[test]
    fn empirical_nlos_fraction_concentrates() {
        // Binomial concentration at 4 sigma over a large edge count.
        let net = grid_net(60); // 62 nodes fully connected: 1891 edges
        let p = 0.3;
        let model = NoiseModel::new(0.5, p, 10.0).unwrap();
        let ms = synthesize(&net, &model, 11).unwrap();
        let ratio = nlos_ratio(&ms).unwrap();
        let n = ms.len() as f64;
        let sd = (p * (1.0 - p) / n).sqrt();
        assert!(
            (ratio - p).abs() < 4.0 * sd,
            "ratio {ratio} vs p {p} (sd {sd})"
        );
    }

    #[test]
    fn los_residuals_mean_and_variance_sane() {
        let net = grid_net(60);
        let sigma = 0.5;
        let model = NoiseModel::new(sigma, 0.0, 10.0).unwrap();
        // Accumulate residuals across several seeds to pass 1e4 samples.
        let mut residuals = Vec::new();
        let mut seed = 0;
        while residuals.len() < 10_000 {
            let ms = synthesize(&net, &model, seed).unwrap();
            for (e, m) in ms.iter() {
                let d = distance(
                    net.true_position(e.lo()).unwrap(),
                    net.true_position(e.hi()).unwrap(),
                );
                residuals.push(m.range - d);
            }
            seed += 1;
        }
        let n = residuals.len() as f64;
        let mean = residuals.iter().sum::<f64>() / n;
        let var = residuals.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / n;
        assert!(mean.abs() < 4.0 * sigma / n.sqrt(), "mean {mean}");
        assert!(
            (var - sigma * sigma).abs() < 0.2 * sigma * sigma,
            "variance {var} vs {}",
            sigma * sigma
        );
    }

    #[test]
    fn nlos_ratio_counts() {
        let mk = |labels: &[LinkLabel]| {
            MeasurementSet::from_entries(labels.iter().enumerate().map(|(i, &l)| {
                (
                    Edge::new(NodeId(i), NodeId(i + 100)).unwrap(),
                    LinkMeasurement {
                        range: 1.0,
                        label: Some(l),
                    },
                )
            }))
        };
        assert_eq!(nlos_ratio(&mk(&[LinkLabel::Los; 4])).unwrap(), 0.0);
        assert_eq!(nlos_ratio(&mk(&[LinkLabel::Nlos; 4])).unwrap(), 1.0);
        let mut labels = vec![LinkLabel::Nlos; 3];
        labels.extend([LinkLabel::Los; 7]);
        assert_eq!(nlos_ratio(&mk(&labels)).unwrap(), 0.3);
        assert_eq!(
            nlos_ratio(&MeasurementSet::default()),
            Err(MeasurementError::EmptySet)
        );
    }

    #[test]
    fn synthesize_requires_truth() {
        let net = Network::new(
            1,
            1,
            vec![Position::new(0.0, 0.0)],
            None,
            [Edge::new(NodeId(0), NodeId(1)).unwrap()],
        )
        .unwrap();
        let model = NoiseModel::new(0.5, 0.0, 10.0).unwrap();
        assert_eq!(
            synthesize(&net, &model, 0),
            Err(MeasurementError::MissingTruePositions)
        );
    }

    #[test]
    fn model_validation() {
        assert!(NoiseModel::new(-0.1, 0.5, 10.0).is_err());
        assert!(NoiseModel::new(0.5, 1.5, 10.0).is_err());
        assert!(NoiseModel::new(0.5, -0.1, 10.0).is_err());
        assert!(NoiseModel::new(0.5, 0.5, 0.0).is_err());
        assert!(NoiseModel::new(0.5, 0.5, 10.0).is_ok());
    }
}
