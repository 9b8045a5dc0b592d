//! Executes scenarios across seeds and writes their results to disk:
//! a summary table, per-metric time series, per-link reservations, and
//! optional event traces.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use thiserror::Error;

use crate::engine::{EngineError, Simulation};
use crate::hose::{minimal_reservation, HoseError};
use crate::metrics::{emit_timeseries, metric_names, MetricsError, RunSet};
use crate::policy::{policy_by_name, PolicyError};
use crate::scenario::{Scenario, ScenarioError};
use crate::topology::LinkKey;

#[derive(Debug, Error)]
pub enum RunnerError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Hose(#[from] HoseError),
    #[error("cannot write results: {0}")]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Invalid(String),
}

/// Command-line overrides applied on top of the scenario file.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub seed: Option<u64>,
    pub runs: Option<u32>,
    pub policy: Option<String>,
    pub trace: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub path: String,
    pub allocated_bw_bps: u64,
    pub packets_received: f64,
    pub pdr_percent: f64,
    pub routing_delay_s: f64,
    pub energy_j: f64,
    pub packet_loss: f64,
}

/// Results of all runs of one scenario.
#[derive(Debug)]
pub struct ScenarioOutput {
    pub rows: Vec<SummaryRow>,
    pub runs: RunSet,
    pub traces: Vec<Option<String>>,
    pub reservations: Option<Vec<(String, f64)>>,
    pub base_seed: u64,
}

/// Runs every seed of a scenario and aggregates. Writes nothing.
pub fn run_scenario(scenario: &Scenario, opts: &RunOptions) -> Result<ScenarioOutput, RunnerError> {
    scenario.validate()?;
    let base_seed = opts.seed.unwrap_or(scenario.base_seed);
    let run_count = opts.runs.unwrap_or(scenario.runs);
    if run_count == 0 {
        return Err(RunnerError::Invalid("need at least one run".into()));
    }
    let policy_name = opts.policy.as_deref().unwrap_or(&scenario.policy);

    let mut reports = Vec::new();
    let mut traces = Vec::new();
    for k in 0..run_count {
        let seed = base_seed.wrapping_add(k as u64);
        let resolved = scenario.resolve(seed, opts.trace)?;
        let policy = policy_by_name(policy_name)?;
        let mut sim = Simulation::new(
            resolved.topology,
            resolved.config,
            resolved.flows,
            resolved.failures,
            resolved.tables,
            policy,
        )?;
        let result = sim.run()?;
        reports.push(result.report);
        traces.push(result.trace);
    }

    let min_runs = (scenario.min_runs as usize).min(run_count as usize);
    let runs = RunSet::aggregate(reports, min_runs)?;
    let rows = summary_rows(scenario, &runs.mean.per_path);
    let reservations = reservation_rows(scenario)?;
    Ok(ScenarioOutput { rows, runs, traces, reservations, base_seed })
}

fn summary_rows(
    scenario: &Scenario,
    per_path: &BTreeMap<String, crate::metrics::MeanBucket>,
) -> Vec<SummaryRow> {
    let allocations: BTreeMap<&str, u64> = scenario
        .paths
        .iter()
        .map(|p| (p.label.as_str(), p.allocated_bw_bps))
        .collect();
    per_path
        .iter()
        .map(|(label, b)| SummaryRow {
            path: label.clone(),
            allocated_bw_bps: allocations.get(label.as_str()).copied().unwrap_or(0),
            packets_received: b.received,
            pdr_percent: b.pdr_percent,
            routing_delay_s: b.mean_delay_s,
            energy_j: b.energy_j,
            packet_loss: b.dropped,
        })
        .collect()
}

/// Minimal per-link reservations under the scenario's hose bounds, as
/// (link label, bits/s) rows. None when the scenario has no hose block.
fn reservation_rows(scenario: &Scenario) -> Result<Option<Vec<(String, f64)>>, RunnerError> {
    // Hose blocks require an explicit topology, which is seed-independent.
    let topo = scenario.build_topology(0)?;
    let Some((spec, fractions)) = scenario.hose_inputs(&topo)? else { return Ok(None) };
    let links: Vec<LinkKey> = fractions.links_used();
    let reservation = minimal_reservation(&fractions, &spec, &links)?;
    let rows = reservation
        .iter()
        .map(|(key, bps)| {
            let (a, b) = key.endpoints();
            (format!("{}-{}", topo.label(a), topo.label(b)), bps)
        })
        .collect();
    Ok(Some(rows))
}

/// Renders the summary table the way the CLI prints it.
pub fn format_summary(rows: &[SummaryRow]) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<12} {:>14} {:>12} {:>8} {:>12} {:>10} {:>12}",
        "path", "bandwidth_bps", "received", "pdr_%", "delay_ms", "energy_J", "lost"
    );
    for r in rows {
        let _ = writeln!(
            out,
            "{:<12} {:>14} {:>12.1} {:>8.2} {:>12.3} {:>10.4} {:>12.1}",
            r.path,
            r.allocated_bw_bps,
            r.packets_received,
            r.pdr_percent,
            r.routing_delay_s * 1e3,
            r.energy_j,
            r.packet_loss,
        );
    }
    out
}

fn csv_field(value: f64) -> String {
    // Shortest lossless float form keeps the files diffable.
    format!("{value}")
}

/// Writes one scenario's outputs under `dir`:
///
/// * `summary.csv`, one row per path bucket;
/// * `<metric>.csv` time series for every metric name;
/// * `reservation.csv` when the scenario carries hose bounds;
/// * `run-<k>/events.tsv` when traces were recorded.
pub fn write_outputs(output: &ScenarioOutput, dir: &Path) -> Result<(), RunnerError> {
    if dir.exists() {
        std::fs::remove_dir_all(dir)?;
    }
    std::fs::create_dir_all(dir)?;

    let mut summary = String::from(
        "path,bandwidth_bps,packets_received,pdr_percent,routing_delay_s,energy_j,packet_loss\n",
    );
    for r in &output.rows {
        let _ = writeln!(
            summary,
            "{},{},{},{},{},{},{}",
            r.path,
            r.allocated_bw_bps,
            csv_field(r.packets_received),
            csv_field(r.pdr_percent),
            csv_field(r.routing_delay_s),
            csv_field(r.energy_j),
            csv_field(r.packet_loss),
        );
    }
    std::fs::write(dir.join("summary.csv"), summary)?;

    for metric in metric_names() {
        let series = emit_timeseries(&output.runs.mean, metric)?;
        let mut text = String::from("time_s,value\n");
        for (t, v) in series {
            let _ = writeln!(text, "{},{}", csv_field(t), csv_field(v));
        }
        std::fs::write(dir.join(format!("{metric}.csv")), text)?;
    }

    if let Some(rows) = &output.reservations {
        let mut text = String::from("link,reserved_bps\n");
        for (link, bps) in rows {
            let _ = writeln!(text, "{},{}", link, csv_field(*bps));
        }
        std::fs::write(dir.join("reservation.csv"), text)?;
    }

    for (k, trace) in output.traces.iter().enumerate() {
        if let Some(trace) = trace {
            let run_dir = dir.join(format!("run-{k}"));
            std::fs::create_dir_all(&run_dir)?;
            std::fs::write(run_dir.join("events.tsv"), trace)?;
        }
    }
    Ok(())
}

/// Parameters a sweep can vary.
pub const SWEEP_PARAMS: &[&str] = &["packet_size", "flow_interval", "failure_time"];

fn apply_sweep(scenario: &Scenario, param: &str, value: f64) -> Result<Scenario, RunnerError> {
    let mut s = scenario.clone();
    match param {
        "packet_size" => {
            if !(value >= 1.0 && value <= u32::MAX as f64 && value.fract() == 0.0) {
                return Err(RunnerError::Invalid(format!(
                    "packet_size sweep value {value} is not a positive integer"
                )));
            }
            for f in &mut s.flows {
                f.packet_size_bytes = value as u32;
            }
        }
        "flow_interval" => {
            if !(value >= 1.0 && value.fract() == 0.0) {
                return Err(RunnerError::Invalid(format!(
                    "flow_interval sweep value {value} is not a positive nanosecond count"
                )));
            }
            for f in &mut s.flows {
                f.interval_ns = value as u64;
            }
        }
        "failure_time" => {
            if s.failures.is_empty() {
                return Err(RunnerError::Invalid(
                    "failure_time sweep needs at least one failure".into(),
                ));
            }
            for fail in &mut s.failures {
                fail.at_s = value;
            }
        }
        other => {
            return Err(RunnerError::Invalid(format!(
                "unknown sweep parameter {other:?}, expected one of {SWEEP_PARAMS:?}"
            )))
        }
    }
    s.validate()?;
    Ok(s)
}

/// Runs the scenario once per value of `param`, writing each variant
/// under `dir/<param>-<value>` plus a combined `sweep_<param>.csv`.
pub fn run_sweep(
    scenario: &Scenario,
    opts: &RunOptions,
    param: &str,
    values: &[f64],
    dir: &Path,
) -> Result<Vec<(f64, ScenarioOutput)>, RunnerError> {
    if values.is_empty() {
        return Err(RunnerError::Invalid("sweep needs at least one value".into()));
    }
    let mut results = Vec::new();
    for &value in values {
        let variant = apply_sweep(scenario, param, value)?;
        let output = run_scenario(&variant, opts)?;
        write_outputs(&output, &dir.join(format!("{param}-{value}")))?;
        results.push((value, output));
    }
    let mut combined = String::from(
        "value,path,bandwidth_bps,packets_received,pdr_percent,routing_delay_s,energy_j,packet_loss\n",
    );
    for (value, output) in &results {
        for r in &output.rows {
            let _ = writeln!(
                combined,
                "{},{},{},{},{},{},{},{}",
                csv_field(*value),
                r.path,
                r.allocated_bw_bps,
                csv_field(r.packets_received),
                csv_field(r.pdr_percent),
                csv_field(r.routing_delay_s),
                csv_field(r.energy_j),
                csv_field(r.packet_loss),
            );
        }
    }
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join(format!("sweep_{param}.csv")), combined)?;
    Ok(results)
}

/// Convenience entry point used by the CLI: run, write, return.
pub fn run_and_write(
    scenario: &Scenario,
    opts: &RunOptions,
    dir: &Path,
) -> Result<ScenarioOutput, RunnerError> {
    let output = run_scenario(scenario, opts)?;
    write_outputs(&output, dir)?;
    Ok(output)
}
