//! Persistence and ingestion: delimited-text coordinate and measurement
//! files, dataset bundles for the 44-node office experiment (real or
//! surrogate), the three debiasing scenarios, and line-delimited report
//! files with a leading schema-version record.
//!
//! File formats:
//! - coordinates file: header `id,x_m,y_m,role`, role in {sensor, anchor}
//! - measurements file: header `i,j,range_m` (optionally `,label` with
//!   values {los, nlos}), `i < j`
//! - report file: JSON lines tagged `version` / `run` / `aggregate`
//!
//! Lines starting with `#` are comments; writers use them to echo the
//! producing command's configuration.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::eval::{RunRecord, RunReport};
use crate::measurement::{LinkLabel, LinkMeasurement, MeasurementSet};
use crate::network::{distance, Edge, Network, NetworkError, NodeId, Position, Role};

pub const COORDS_FILE: &str = "coordinates.csv";
pub const MEASUREMENTS_FILE: &str = "measurements.csv";
pub const AVG_BIAS_FILE: &str = "avg_bias.txt";

pub const REPORT_SCHEMA: &str = "huberloc-report";
pub const REPORT_VERSION: u32 = 1;

/// Spread threshold (meters) above which duplicate readings of one pair are
/// flagged; roughly three times the 1 m noise estimate for the office data.
const DUPLICATE_SPREAD_WARN_M: f64 = 3.0;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}:{line}: {msg}")]
    Parse { path: String, line: usize, msg: String },
    #[error("missing file: {0}")]
    MissingFile(PathBuf),
    #[error("empty file: {0}")]
    EmptyFile(PathBuf),
    #[error("{0}")]
    Invalid(String),
    #[error("report schema mismatch: found {found} v{found_version}, expected {REPORT_SCHEMA} v{REPORT_VERSION}")]
    SchemaVersion { found: String, found_version: u32 },
    #[error("average bias must be >= 0, got {0}")]
    BadBias(f64),
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Json(#[from] serde_json::Error),
}

/// One node row of a coordinates file.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NodeRecord {
    pub id: usize,
    pub position: Position,
    pub role: Role,
}

/// One measurement row. `label` is present only when the producer knew the
/// ground-truth propagation condition.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RangeRecord {
    pub i: usize,
    pub j: usize,
    pub range: f64,
    pub label: Option<LinkLabel>,
}

fn parse_field<T: FromStr>(
    raw: &str,
    path: &Path,
    line: usize,
    field: &str,
) -> Result<T, DataError> {
    raw.trim().parse::<T>().map_err(|_| DataError::Parse {
        path: path.display().to_string(),
        line,
        msg: format!("cannot parse {field} from `{}`", raw.trim()),
    })
}

fn data_lines(path: &Path) -> Result<Vec<(usize, String)>, DataError> {
    if !path.exists() {
        return Err(DataError::MissingFile(path.to_path_buf()));
    }
    let reader = BufReader::new(fs::File::open(path)?);
    let mut lines = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        lines.push((idx + 1, trimmed.to_string()));
    }
    if lines.is_empty() {
        return Err(DataError::EmptyFile(path.to_path_buf()));
    }
    Ok(lines)
}

fn expect_header(path: &Path, lines: &[(usize, String)], expected: &[&str]) -> Result<(), DataError> {
    let (line_no, header) = &lines[0];
    let fields: Vec<&str> = header.split(',').map(str::trim).collect();
    if fields.len() < expected.len() || fields[..expected.len()] != *expected {
        return Err(DataError::Parse {
            path: path.display().to_string(),
            line: *line_no,
            msg: format!("expected header `{}`, found `{header}`", expected.join(",")),
        });
    }
    Ok(())
}

pub fn read_coordinates(path: &Path) -> Result<Vec<NodeRecord>, DataError> {
    let lines = data_lines(path)?;
    expect_header(path, &lines, &["id", "x_m", "y_m", "role"])?;
    let mut records = Vec::new();
    for (line_no, line) in &lines[1..] {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 4 {
            return Err(DataError::Parse {
                path: path.display().to_string(),
                line: *line_no,
                msg: format!("expected 4 fields, found {}", fields.len()),
            });
        }
        let id: usize = parse_field(fields[0], path, *line_no, "id")?;
        let x: f64 = parse_field(fields[1], path, *line_no, "x_m")?;
        let y: f64 = parse_field(fields[2], path, *line_no, "y_m")?;
        let role = match fields[3].trim() {
            "sensor" => Role::Sensor,
            "anchor" => Role::Anchor,
            other => {
                return Err(DataError::Parse {
                    path: path.display().to_string(),
                    line: *line_no,
                    msg: format!("role must be `sensor` or `anchor`, found `{other}`"),
                })
            }
        };
        if !x.is_finite() || !y.is_finite() {
            return Err(DataError::Parse {
                path: path.display().to_string(),
                line: *line_no,
                msg: "coordinates must be finite".into(),
            });
        }
        records.push(NodeRecord {
            id,
            position: Position::new(x, y),
            role,
        });
    }
    Ok(records)
}

pub fn read_measurements(path: &Path) -> Result<Vec<RangeRecord>, DataError> {
    let lines = data_lines(path)?;
    expect_header(path, &lines, &["i", "j", "range_m"])?;
    let mut records = Vec::new();
    for (line_no, line) in &lines[1..] {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 3 && fields.len() != 4 {
            return Err(DataError::Parse {
                path: path.display().to_string(),
                line: *line_no,
                msg: format!("expected 3 or 4 fields, found {}", fields.len()),
            });
        }
        let i: usize = parse_field(fields[0], path, *line_no, "i")?;
        let j: usize = parse_field(fields[1], path, *line_no, "j")?;
        let range: f64 = parse_field(fields[2], path, *line_no, "range_m")?;
        let label = if fields.len() == 4 {
            match fields[3].trim() {
                "los" => Some(LinkLabel::Los),
                "nlos" => Some(LinkLabel::Nlos),
                "" => None,
                other => {
                    return Err(DataError::Parse {
                        path: path.display().to_string(),
                        line: *line_no,
                        msg: format!("label must be `los` or `nlos`, found `{other}`"),
                    })
                }
            }
        } else {
            None
        };
        if i == j {
            return Err(DataError::Parse {
                path: path.display().to_string(),
                line: *line_no,
                msg: format!("self-measurement ({i}, {j})"),
            });
        }
        records.push(RangeRecord { i, j, range, label });
    }
    Ok(records)
}

pub fn write_coordinates(
    path: &Path,
    nodes: &[NodeRecord],
    comments: &[String],
) -> Result<(), DataError> {
    let mut f = fs::File::create(path)?;
    for c in comments {
        writeln!(f, "# {c}")?;
    }
    writeln!(f, "id,x_m,y_m,role")?;
    for n in nodes {
        let role = match n.role {
            Role::Sensor => "sensor",
            Role::Anchor => "anchor",
        };
        writeln!(f, "{},{},{},{}", n.id, n.position.x, n.position.y, role)?;
    }
    Ok(())
}

pub fn write_measurements(
    path: &Path,
    rows: &[RangeRecord],
    comments: &[String],
) -> Result<(), DataError> {
    let labeled = rows.iter().any(|r| r.label.is_some());
    let mut f = fs::File::create(path)?;
    for c in comments {
        writeln!(f, "# {c}")?;
    }
    if labeled {
        writeln!(f, "i,j,range_m,label")?;
    } else {
        writeln!(f, "i,j,range_m")?;
    }
    for r in rows {
        let (i, j) = if r.i < r.j { (r.i, r.j) } else { (r.j, r.i) };
        if labeled {
            let label = match r.label {
                Some(LinkLabel::Los) => "los",
                Some(LinkLabel::Nlos) => "nlos",
                None => "",
            };
            writeln!(f, "{i},{j},{},{label}", r.range)?;
        } else {
            writeln!(f, "{i},{j},{}", r.range)?;
        }
    }
    Ok(())
}

/// Canonical node rows of a network (sensors first, then anchors); requires
/// ground-truth sensor positions.
pub fn network_to_records(net: &Network) -> Result<Vec<NodeRecord>, DataError> {
    let truth = net.true_sensor_positions().ok_or_else(|| {
        DataError::Invalid("network has no true sensor positions to write".into())
    })?;
    let mut rows = Vec::with_capacity(net.node_count());
    for (i, p) in truth.iter().enumerate() {
        rows.push(NodeRecord {
            id: i,
            position: *p,
            role: Role::Sensor,
        });
    }
    for (k, p) in net.anchor_positions().iter().enumerate() {
        rows.push(NodeRecord {
            id: net.num_sensors() + k,
            position: *p,
            role: Role::Anchor,
        });
    }
    Ok(rows)
}

pub fn measurement_records(ms: &MeasurementSet) -> Vec<RangeRecord> {
    ms.iter()
        .map(|(e, m)| RangeRecord {
            i: e.lo().0,
            j: e.hi().0,
            range: m.range,
            label: m.label,
        })
        .collect()
}

/// Builds a solveable network and measurement set from file records.
/// Node ids may be arbitrary; sensors are renumbered first in file order,
/// anchors after. Returns the canonical-index -> file-id mapping.
pub fn assemble_network(
    nodes: &[NodeRecord],
    rows: &[RangeRecord],
) -> Result<(Network, MeasurementSet, Vec<usize>), DataError> {
    let mut id_to_canonical: BTreeMap<usize, usize> = BTreeMap::new();
    let sensors: Vec<&NodeRecord> = nodes.iter().filter(|n| n.role == Role::Sensor).collect();
    let anchors: Vec<&NodeRecord> = nodes.iter().filter(|n| n.role == Role::Anchor).collect();
    let mut canonical_to_id = Vec::with_capacity(nodes.len());
    for (idx, n) in sensors.iter().chain(anchors.iter()).enumerate() {
        if id_to_canonical.insert(n.id, idx).is_some() {
            return Err(DataError::Invalid(format!("duplicate node id {}", n.id)));
        }
        canonical_to_id.push(n.id);
    }

    let mut edges = Vec::new();
    let mut entries = BTreeMap::new();
    for r in rows {
        let a = *id_to_canonical
            .get(&r.i)
            .ok_or_else(|| DataError::Invalid(format!("measurement references unknown node {}", r.i)))?;
        let b = *id_to_canonical
            .get(&r.j)
            .ok_or_else(|| DataError::Invalid(format!("measurement references unknown node {}", r.j)))?;
        let edge = Edge::new(NodeId(a), NodeId(b))?;
        if entries
            .insert(
                edge,
                LinkMeasurement {
                    range: r.range,
                    label: r.label,
                },
            )
            .is_some()
        {
            return Err(DataError::Invalid(format!(
                "duplicate measurement for pair ({}, {})",
                r.i, r.j
            )));
        }
        edges.push(edge);
    }

    let net = Network::new(
        sensors.len(),
        anchors.len(),
        anchors.iter().map(|n| n.position).collect(),
        Some(sensors.iter().map(|n| n.position).collect()),
        edges,
    )?;
    Ok((net, MeasurementSet::from_entries(entries), canonical_to_id))
}

/// A loaded measurement-campaign bundle: node coordinates (ground truth),
/// one range per node pair (duplicate readings averaged), optional labels,
/// and the campaign's single average bias when known.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetBundle {
    pub nodes: Vec<NodeRecord>,
    /// Keyed by file-id pairs `(lo, hi)`.
    pub ranges: BTreeMap<(usize, usize), f64>,
    pub labels: BTreeMap<(usize, usize), LinkLabel>,
    pub avg_bias: Option<f64>,
    pub surrogate: bool,
    pub warnings: Vec<String>,
}

impl DatasetBundle {
    pub fn num_sensors(&self) -> usize {
        self.nodes.iter().filter(|n| n.role == Role::Sensor).count()
    }

    pub fn num_anchors(&self) -> usize {
        self.nodes.iter().filter(|n| n.role == Role::Anchor).count()
    }

    /// File ids of the sensors in canonical order.
    pub fn sensor_ids(&self) -> Vec<usize> {
        self.nodes
            .iter()
            .filter(|n| n.role == Role::Sensor)
            .map(|n| n.id)
            .collect()
    }
}

/// Loads a bundle directory holding `coordinates.csv` and `measurements.csv`
/// (plus optional `avg_bias.txt`). Duplicate readings of one pair, in either
/// direction, are averaged; pairs whose readings spread more than 3 m are
/// listed in the warnings.
pub fn load_dataset(dir: &Path) -> Result<DatasetBundle, DataError> {
    let nodes = read_coordinates(&dir.join(COORDS_FILE))?;
    let rows = read_measurements(&dir.join(MEASUREMENTS_FILE))?;

    let mut readings: BTreeMap<(usize, usize), Vec<f64>> = BTreeMap::new();
    let mut labels: BTreeMap<(usize, usize), LinkLabel> = BTreeMap::new();
    for r in &rows {
        let key = if r.i < r.j { (r.i, r.j) } else { (r.j, r.i) };
        readings.entry(key).or_default().push(r.range);
        if let Some(l) = r.label {
            labels.insert(key, l);
        }
    }

    let mut warnings = Vec::new();
    let mut ranges = BTreeMap::new();
    for (key, values) in readings {
        let min = values.iter().copied().fold(f64::INFINITY, f64::min);
        let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if values.len() > 1 && max - min > DUPLICATE_SPREAD_WARN_M {
            warnings.push(format!(
                "pair ({}, {}): {} readings spread {:.2} m",
                key.0,
                key.1,
                values.len(),
                max - min
            ));
        }
        ranges.insert(key, values.iter().sum::<f64>() / values.len() as f64);
    }

    let avg_bias_path = dir.join(AVG_BIAS_FILE);
    let avg_bias = if avg_bias_path.exists() {
        let text = fs::read_to_string(&avg_bias_path)?;
        Some(parse_field::<f64>(text.trim(), &avg_bias_path, 1, "avg_bias")?)
    } else {
        None
    };

    Ok(DatasetBundle {
        nodes,
        ranges,
        labels,
        avg_bias,
        surrogate: false,
        warnings,
    })
}

/// Writes a bundle out in the same layout `load_dataset` reads.
pub fn write_bundle(bundle: &DatasetBundle, dir: &Path) -> Result<(), DataError> {
    fs::create_dir_all(dir)?;
    let comments = if bundle.surrogate {
        vec!["surrogate: true".to_string()]
    } else {
        Vec::new()
    };
    write_coordinates(&dir.join(COORDS_FILE), &bundle.nodes, &comments)?;
    let rows: Vec<RangeRecord> = bundle
        .ranges
        .iter()
        .map(|(&(i, j), &range)| RangeRecord {
            i,
            j,
            range,
            label: bundle.labels.get(&(i, j)).copied(),
        })
        .collect();
    write_measurements(&dir.join(MEASUREMENTS_FILE), &rows, &comments)?;
    if let Some(b) = bundle.avg_bias {
        fs::write(dir.join(AVG_BIAS_FILE), format!("{b}\n"))?;
    }
    Ok(())
}

/// The three debiasing scenarios for campaign data.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DebiasMode {
    /// Ranges as measured: heavy contamination.
    Raw,
    /// The average bias subtracted from a uniformly random half of the
    /// links: moderate contamination.
    HalfDebiased { seed: u64 },
    /// The average bias subtracted from every link: light contamination.
    FullDebiased,
}

/// Materializes a bundle into a solver-ready network and measurement set
/// under the chosen debias mode. Topology is untouched; only range values
/// change.
pub fn apply_debias(
    bundle: &DatasetBundle,
    mode: DebiasMode,
    avg_bias: f64,
) -> Result<(Network, MeasurementSet), DataError> {
    if !avg_bias.is_finite() || avg_bias < 0.0 {
        return Err(DataError::BadBias(avg_bias));
    }
    let mut rows: Vec<RangeRecord> = bundle
        .ranges
        .iter()
        .map(|(&(i, j), &range)| RangeRecord {
            i,
            j,
            range,
            label: bundle.labels.get(&(i, j)).copied(),
        })
        .collect();

    match mode {
        DebiasMode::Raw => {}
        DebiasMode::FullDebiased => {
            for r in &mut rows {
                r.range -= avg_bias;
            }
        }
        DebiasMode::HalfDebiased { seed } => {
            let mut order: Vec<usize> = (0..rows.len()).collect();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            order.shuffle(&mut rng);
            for &idx in order.iter().take(rows.len() / 2) {
                rows[idx].range -= avg_bias;
            }
        }
    }

    let (net, ms, _) = assemble_network(&bundle.nodes, &rows)?;
    Ok((net, ms))
}

/// Office-scale stand-in for the 44-node measurement campaign: 4 corner
/// anchors, 40 sensors, all pairs measured, sigma_n around 1 m, and a
/// predominantly positive range bias concentrated near its mean so that
/// subtracting the average genuinely debiases the data.
pub fn surrogate_bundle(seed: u64) -> DatasetBundle {
    const WIDTH: f64 = 14.0;
    const HEIGHT: f64 = 13.0;
    const SENSORS: usize = 40;
    const SIGMA: f64 = 1.0;
    const BIAS_MEAN: f64 = 2.5;
    const BIAS_STD: f64 = 0.5;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, SIGMA).expect("static sigma");
    let bias = Normal::new(BIAS_MEAN, BIAS_STD).expect("static bias");

    let mut nodes = Vec::with_capacity(SENSORS + 4);
    for id in 0..SENSORS {
        let x = 0.5 + rand::Rng::random_range(&mut rng, 0.0..WIDTH - 1.0);
        let y = 0.5 + rand::Rng::random_range(&mut rng, 0.0..HEIGHT - 1.0);
        nodes.push(NodeRecord {
            id,
            position: Position::new(x, y),
            role: Role::Sensor,
        });
    }
    for (k, (x, y)) in [(0.0, 0.0), (WIDTH, 0.0), (WIDTH, HEIGHT), (0.0, HEIGHT)]
        .into_iter()
        .enumerate()
    {
        nodes.push(NodeRecord {
            id: SENSORS + k,
            position: Position::new(x, y),
            role: Role::Anchor,
        });
    }

    let mut ranges = BTreeMap::new();
    let mut labels = BTreeMap::new();
    let mut bias_sum = 0.0;
    let mut links = 0usize;
    for i in 0..nodes.len() {
        for j in (i + 1)..nodes.len() {
            let d = distance(nodes[i].position, nodes[j].position);
            let b = bias.sample(&mut rng).max(0.0);
            let r = d + b + noise.sample(&mut rng);
            ranges.insert((nodes[i].id, nodes[j].id), r);
            labels.insert((nodes[i].id, nodes[j].id), LinkLabel::Nlos);
            bias_sum += b;
            links += 1;
        }
    }

    DatasetBundle {
        nodes,
        ranges,
        labels,
        avg_bias: Some(bias_sum / links as f64),
        surrogate: true,
        warnings: Vec::new(),
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum ReportLine {
    Version {
        schema: String,
        version: u32,
    },
    Run(RunRecord),
    Aggregate {
        method: String,
        mc_runs: usize,
        failures: usize,
        sorted_errors_m: Vec<f64>,
        /// Absent when every run failed (no error samples).
        mean_m: Option<f64>,
        median_m: Option<f64>,
    },
}

fn finite_or_none(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}

/// Writes a report as JSON lines: a version record, one record per MC run,
/// and one aggregate record. The round trip through `load_report` is
/// lossless.
pub fn save_report(report: &RunReport, path: &Path) -> Result<(), DataError> {
    let mut f = fs::File::create(path)?;
    let version = ReportLine::Version {
        schema: REPORT_SCHEMA.to_string(),
        version: REPORT_VERSION,
    };
    writeln!(f, "{}", serde_json::to_string(&version)?)?;
    for record in &report.records {
        writeln!(f, "{}", serde_json::to_string(&ReportLine::Run(record.clone()))?)?;
    }
    let aggregate = ReportLine::Aggregate {
        method: report.method.clone(),
        mc_runs: report.mc_runs,
        failures: report.failures,
        sorted_errors_m: report.sorted_errors_m.clone(),
        mean_m: finite_or_none(report.mean_m),
        median_m: finite_or_none(report.median_m),
    };
    writeln!(f, "{}", serde_json::to_string(&aggregate)?)?;
    Ok(())
}

pub fn load_report(path: &Path) -> Result<RunReport, DataError> {
    let lines = data_lines(path)?;
    let mut records: Vec<RunRecord> = Vec::new();
    let mut aggregate = None;
    let mut version_seen = false;
    for (line_no, line) in &lines {
        let parsed: ReportLine = serde_json::from_str(line).map_err(|e| DataError::Parse {
            path: path.display().to_string(),
            line: *line_no,
            msg: e.to_string(),
        })?;
        match parsed {
            ReportLine::Version { schema, version } => {
                if schema != REPORT_SCHEMA || version != REPORT_VERSION {
                    return Err(DataError::SchemaVersion {
                        found: schema,
                        found_version: version,
                    });
                }
                version_seen = true;
            }
            ReportLine::Run(r) => records.push(r),
            ReportLine::Aggregate {
                method,
                mc_runs,
                failures,
                sorted_errors_m,
                mean_m,
                median_m,
            } => {
                aggregate = Some(RunReport {
                    method,
                    mc_runs,
                    failures,
                    sorted_errors_m,
                    mean_m: mean_m.unwrap_or(f64::NAN),
                    median_m: median_m.unwrap_or(f64::NAN),
                    records: Vec::new(),
                });
            }
        }
    }
    if !version_seen {
        return Err(DataError::Invalid(format!(
            "{}: missing leading version record",
            path.display()
        )));
    }
    let mut report = aggregate.ok_or_else(|| {
        DataError::Invalid(format!("{}: missing aggregate record", path.display()))
    })?;
    report.records = records;
    Ok(report)
}
