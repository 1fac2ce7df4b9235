//! Output-file helpers. Every tabular file carries `#`-prefixed comment
//! lines echoing the producing command and the effective scenario, so a
//! figure can be regenerated from its data file alone.

use std::fs;
use std::io::Write;
use std::path::Path;

use huberloc_core::{RunReport, ScenarioConfig, SolveTrace};

use crate::CliError;

pub const TRACE_SCHEMA: &str = "huberloc-trace";
pub const TRACE_VERSION: u32 = 1;

/// Comment lines identifying the command and its effective configuration.
pub fn config_echo(
    command: &str,
    seed: u64,
    scenario: &ScenarioConfig,
    extra: &[(&str, String)],
) -> Vec<String> {
    let mut lines = Vec::new();
    let mut head = format!("huberloc {command} seed={seed}");
    for (k, v) in extra {
        head.push_str(&format!(" {k}={v}"));
    }
    lines.push(head);
    lines.push(format!(
        "scenario: {}",
        serde_json::to_string(scenario).expect("scenario serializes")
    ));
    lines
}

pub fn write_table(
    path: &Path,
    comments: &[String],
    header: &str,
    rows: impl IntoIterator<Item = String>,
) -> Result<(), CliError> {
    let mut f = fs::File::create(path)?;
    for c in comments {
        writeln!(f, "# {c}")?;
    }
    writeln!(f, "{header}")?;
    for row in rows {
        writeln!(f, "{row}")?;
    }
    Ok(())
}

/// Empirical CDF table: one row per sample in ascending order.
pub fn write_cdf(path: &Path, comments: &[String], report: &RunReport) -> Result<(), CliError> {
    let n = report.sorted_errors_m.len() as f64;
    write_table(
        path,
        comments,
        "error_m,fraction",
        report
            .sorted_errors_m
            .iter()
            .enumerate()
            .map(|(i, e)| format!("{e},{}", (i + 1) as f64 / n)),
    )
}

pub fn write_summary(
    path: &Path,
    comments: &[String],
    reports: &[&RunReport],
) -> Result<(), CliError> {
    write_table(
        path,
        comments,
        "method,runs,failures,mean_m,median_m,p90_m",
        reports.iter().map(|r| {
            format!(
                "{},{},{},{},{},{}",
                r.method,
                r.mc_runs,
                r.failures,
                r.mean_m,
                r.median_m,
                r.quantile(0.9)
            )
        }),
    )
}

/// Line-delimited trace file: version record, config echo record, then
/// per-round and per-stage records.
pub fn write_trace(
    path: &Path,
    command: &str,
    seed: u64,
    method: &str,
    scenario: &ScenarioConfig,
    traces: &[SolveTrace],
) -> Result<(), CliError> {
    let mut f = fs::File::create(path)?;
    writeln!(
        f,
        "{}",
        serde_json::json!({"kind": "version", "schema": TRACE_SCHEMA, "version": TRACE_VERSION})
    )?;
    writeln!(
        f,
        "{}",
        serde_json::json!({
            "kind": "config",
            "command": command,
            "seed": seed,
            "method": method,
            "scenario": scenario,
        })
    )?;
    for (stage_idx, trace) in traces.iter().enumerate() {
        for round in 0..trace.rounds {
            writeln!(
                f,
                "{}",
                serde_json::json!({
                    "kind": "round",
                    "stage": stage_idx,
                    "round": round + 1,
                    "cost": trace.cost_per_round[round],
                    "max_move": trace.max_move_per_round[round],
                })
            )?;
        }
        writeln!(
            f,
            "{}",
            serde_json::json!({
                "kind": "stage",
                "stage": stage_idx,
                "rounds": trace.rounds,
                "termination": trace.termination,
                "final_cost": trace.final_cost(),
                "warnings": trace.warnings,
            })
        )?;
    }
    Ok(())
}
