//! Subcommand implementations.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use huberloc_core::dataio::{
    self, apply_debias, load_dataset, surrogate_bundle, DatasetBundle, DebiasMode,
};
use huberloc_core::eval::{self, run_method, run_reinit_monte_carlo};
use huberloc_core::{
    nlos_ratio, run_monte_carlo, Method, Position, RunReport, ScenarioConfig, SolveError,
};

use crate::output::{config_echo, write_cdf, write_summary, write_table, write_trace};
use crate::CliError;

fn load_scenario(path: Option<&Path>) -> Result<ScenarioConfig, CliError> {
    let scenario = match path {
        None => ScenarioConfig::default(),
        Some(p) => {
            let text = fs::read_to_string(p)
                .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", p.display())))?;
            toml::from_str(&text)
                .map_err(|e| CliError::Usage(format!("config {}: {e}", p.display())))?
        }
    };
    scenario.validate()?;
    Ok(scenario)
}

fn parse_method(name: &str) -> Result<Method, CliError> {
    name.parse::<Method>().map_err(CliError::Usage)
}

pub fn simulate(
    config: Option<&Path>,
    out: &Path,
    seed: u64,
    run_index: u64,
) -> Result<(), CliError> {
    let scenario = load_scenario(config)?;
    let (net, ms, _) = eval::realize_run(&scenario, seed, run_index)?;
    fs::create_dir_all(out)?;
    let comments = config_echo(
        "simulate",
        seed,
        &scenario,
        &[("run_index", run_index.to_string())],
    );
    let nodes = dataio::network_to_records(&net)?;
    dataio::write_coordinates(&out.join(dataio::COORDS_FILE), &nodes, &comments)?;
    let rows = dataio::measurement_records(&ms);
    dataio::write_measurements(&out.join(dataio::MEASUREMENTS_FILE), &rows, &comments)?;
    println!(
        "wrote {} sensors + {} anchors, {} edges, nlos_ratio {:.4}",
        net.num_sensors(),
        net.num_anchors(),
        net.num_edges(),
        nlos_ratio(&ms)?
    );
    Ok(())
}

pub fn solve(
    network: &Path,
    measurements: &Path,
    method: &str,
    out: &Path,
    seed: u64,
    config: Option<&Path>,
) -> Result<(), CliError> {
    let method = parse_method(method)?;
    let scenario = load_scenario(config)?;
    let nodes = dataio::read_coordinates(network)?;
    let rows = dataio::read_measurements(measurements)?;
    let (net, ms, id_map) = dataio::assemble_network(&nodes, &rows)?;
    let init = huberloc_core::initial_estimates(&net, scenario.init_std, seed)?;

    fs::create_dir_all(out)?;
    let trace_path = out.join("trace.jsonl");
    match run_method(method, &net, &ms, &init, &scenario) {
        Ok((state, traces)) => {
            write_trace(&trace_path, "solve", seed, method.name(), &scenario, &traces)?;
            let comments = config_echo(
                "solve",
                seed,
                &scenario,
                &[("method", method.name().to_string())],
            );
            write_table(
                &out.join("estimates.csv"),
                &comments,
                "sensor,x_m,y_m",
                state
                    .positions
                    .iter()
                    .enumerate()
                    .map(|(i, p)| format!("{},{},{}", id_map[i], p.x, p.y)),
            )?;
            for t in &traces {
                println!(
                    "stage: {} rounds, {}, final cost {:?}",
                    t.rounds,
                    t.termination.as_str(),
                    t.final_cost()
                );
                for w in &t.warnings {
                    eprintln!("warning: {w}");
                }
            }
            Ok(())
        }
        Err(SolveError::Diverged(d)) => {
            write_trace(
                &trace_path,
                "solve",
                seed,
                method.name(),
                &scenario,
                &[d.trace.clone()],
            )?;
            Err(CliError::Runtime(format!(
                "solver diverged after {} rounds; partial trace written to {}",
                d.trace.rounds,
                trace_path.display()
            )))
        }
        Err(e) => Err(e.into()),
    }
}

pub fn eval(
    config: Option<&Path>,
    methods: &str,
    out: &Path,
    seed: u64,
) -> Result<(), CliError> {
    let scenario = load_scenario(config)?;
    let methods: Vec<Method> = methods
        .split(',')
        .map(|s| parse_method(s.trim()))
        .collect::<Result<_, _>>()?;
    if methods.is_empty() {
        return Err(CliError::Usage("--methods must name at least one method".into()));
    }
    let reports = run_monte_carlo(&scenario, &methods, seed)?;
    fs::create_dir_all(out)?;
    write_reports(out, "eval", seed, &scenario, &reports, &[])?;
    Ok(())
}

fn write_reports(
    out: &Path,
    command: &str,
    seed: u64,
    scenario: &ScenarioConfig,
    reports: &BTreeMap<Method, RunReport>,
    extra: &[(&str, String)],
) -> Result<(), CliError> {
    for (method, report) in reports {
        let mut pairs = vec![("method", method.name().to_string())];
        pairs.extend(extra.iter().map(|(k, v)| (*k, v.clone())));
        let comments = config_echo(command, seed, scenario, &pairs);
        write_cdf(&out.join(format!("cdf_{}.csv", method.name())), &comments, report)?;
        dataio::save_report(report, &out.join(format!("report_{}.jsonl", method.name())))?;
        println!(
            "{}: median {:.4} m, mean {:.4} m, p90 {:.4} m ({} runs, {} failures)",
            method.name(),
            report.median_m,
            report.mean_m,
            report.quantile(0.9),
            report.mc_runs,
            report.failures
        );
    }
    let comments = config_echo(command, seed, scenario, extra);
    let ordered: Vec<&RunReport> = reports.values().collect();
    write_summary(&out.join("summary.csv"), &comments, &ordered)?;
    Ok(())
}

pub struct DatasetArgs<'a> {
    pub bundle: Option<&'a Path>,
    pub surrogate: bool,
    pub surrogate_seed: u64,
    pub debias: &'a str,
    pub debias_seed: Option<u64>,
    pub avg_bias: Option<f64>,
    pub method: &'a str,
    pub mc_runs: usize,
    pub out: &'a Path,
    pub seed: u64,
    pub config: Option<&'a Path>,
}

pub fn dataset(args: DatasetArgs<'_>) -> Result<(), CliError> {
    let method = parse_method(args.method)?;
    let bundle: DatasetBundle = match (args.bundle, args.surrogate) {
        (Some(dir), false) => load_dataset(dir)?,
        (None, true) => surrogate_bundle(args.surrogate_seed),
        (None, false) => {
            return Err(CliError::Usage(
                "either --bundle <dir> or --surrogate is required".into(),
            ))
        }
        (Some(_), true) => unreachable!("clap conflicts_with"),
    };
    for w in &bundle.warnings {
        eprintln!("bundle warning: {w}");
    }

    let mode = match args.debias {
        "raw" => DebiasMode::Raw,
        "half" => DebiasMode::HalfDebiased {
            seed: args.debias_seed.unwrap_or(args.seed),
        },
        "full" => DebiasMode::FullDebiased,
        other => {
            return Err(CliError::Usage(format!(
                "unknown debias mode `{other}` (expected raw, half, or full)"
            )))
        }
    };
    let avg_bias = match (args.avg_bias, bundle.avg_bias, mode) {
        (Some(b), _, _) => b,
        (None, _, DebiasMode::Raw) => 0.0,
        (None, Some(b), _) => b,
        (None, None, _) => {
            return Err(CliError::Usage(
                "--avg-bias is required: the bundle carries no average-bias value".into(),
            ))
        }
    };

    let scenario = match args.config {
        Some(p) => load_scenario(Some(p))?,
        None => {
            // Office-data defaults: solver knee tuned to the ~1 m noise
            // estimate of the campaign.
            let mut s = ScenarioConfig::default();
            s.solver_sigma = Some(1.0);
            s
        }
    };

    let (net, ms) = apply_debias(&bundle, mode, avg_bias)?;
    if args.mc_runs == 0 {
        return Err(CliError::Usage("--mc-runs must be >= 1".into()));
    }
    let reports = run_reinit_monte_carlo(&net, &ms, &scenario, &[method], args.seed, args.mc_runs)?;

    fs::create_dir_all(args.out)?;
    let extra = [
        ("debias", args.debias.to_string()),
        ("avg_bias", avg_bias.to_string()),
        ("surrogate", bundle.surrogate.to_string()),
        ("mc_runs", args.mc_runs.to_string()),
    ];
    write_reports(args.out, "dataset", args.seed, &scenario, &reports, &extra)?;

    // Per-sensor median error across re-initializations, keyed by the
    // bundle's own node ids.
    let report = &reports[&method];
    let sensor_ids = bundle.sensor_ids();
    let mut per_sensor: Vec<Vec<f64>> = vec![Vec::new(); sensor_ids.len()];
    for record in report.records.iter().filter(|r| !r.failed) {
        for (i, e) in record.per_sensor_errors_m.iter().enumerate() {
            per_sensor[i].push(*e);
        }
    }
    let mut pairs = vec![("method", method.name().to_string())];
    pairs.extend(extra.iter().map(|(k, v)| (*k, v.clone())));
    let comments = config_echo("dataset", args.seed, &scenario, &pairs);
    write_table(
        &args.out.join("per_sensor_errors.csv"),
        &comments,
        "sensor,median_error_m",
        sensor_ids.iter().zip(per_sensor.iter_mut()).map(|(id, errs)| {
            errs.sort_by(|a, b| a.total_cmp(b));
            format!("{},{}", id, eval::quantile(errs, 0.5))
        }),
    )?;
    Ok(())
}

fn read_estimates(path: &Path) -> Result<BTreeMap<usize, Position>, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("cannot read estimates {}: {e}", path.display())))?;
    let mut out = BTreeMap::new();
    let mut saw_header = false;
    for (line_no, line) in text.lines().enumerate() {
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        if !saw_header {
            if trimmed != "sensor,x_m,y_m" {
                return Err(CliError::Usage(format!(
                    "{}:{}: expected header `sensor,x_m,y_m`",
                    path.display(),
                    line_no + 1
                )));
            }
            saw_header = true;
            continue;
        }
        let fields: Vec<&str> = trimmed.split(',').collect();
        if fields.len() != 3 {
            return Err(CliError::Usage(format!(
                "{}:{}: expected 3 fields",
                path.display(),
                line_no + 1
            )));
        }
        let parse = |s: &str, what: &str| -> Result<f64, CliError> {
            s.trim().parse::<f64>().map_err(|_| {
                CliError::Usage(format!(
                    "{}:{}: cannot parse {what} from `{s}`",
                    path.display(),
                    line_no + 1
                ))
            })
        };
        let id: usize = fields[0].trim().parse().map_err(|_| {
            CliError::Usage(format!(
                "{}:{}: cannot parse sensor id from `{}`",
                path.display(),
                line_no + 1,
                fields[0]
            ))
        })?;
        out.insert(id, Position::new(parse(fields[1], "x_m")?, parse(fields[2], "y_m")?));
    }
    if out.is_empty() {
        return Err(CliError::Usage(format!(
            "{}: no estimate rows found",
            path.display()
        )));
    }
    Ok(out)
}

pub fn check(
    network: &Path,
    measurements: &Path,
    estimates: &Path,
    tol: f64,
) -> Result<(), CliError> {
    let nodes = dataio::read_coordinates(network)?;
    let rows = dataio::read_measurements(measurements)?;
    let est = read_estimates(estimates)?;

    let mut position_of: BTreeMap<usize, Position> = BTreeMap::new();
    for n in &nodes {
        match n.role {
            huberloc_core::Role::Anchor => {
                position_of.insert(n.id, n.position);
            }
            huberloc_core::Role::Sensor => {
                let p = est.get(&n.id).ok_or_else(|| {
                    CliError::Usage(format!("no estimate for sensor {}", n.id))
                })?;
                position_of.insert(n.id, *p);
            }
        }
    }

    let mut violations = 0usize;
    let mut worst = 0.0f64;
    for r in &rows {
        let pi = position_of
            .get(&r.i)
            .ok_or_else(|| CliError::Usage(format!("measurement references unknown node {}", r.i)))?;
        let pj = position_of
            .get(&r.j)
            .ok_or_else(|| CliError::Usage(format!("measurement references unknown node {}", r.j)))?;
        let excess = huberloc_core::distance(*pi, *pj) - r.range;
        if excess > tol {
            violations += 1;
            worst = worst.max(excess);
            if violations <= 10 {
                println!("violation: ({}, {}) outside ball by {excess:.6} m", r.i, r.j);
            }
        }
    }
    if violations == 0 {
        println!("feasible: all {} measured balls satisfied within {tol} m", rows.len());
        Ok(())
    } else {
        Err(CliError::Runtime(format!(
            "{violations} of {} measured balls violated (worst excess {worst:.6} m)",
            rows.len()
        )))
    }
}
