use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::Parser;

use hosesim::runner::{
    format_summary, run_and_write, run_sweep, RunOptions, ScenarioOutput, SWEEP_PARAMS,
};
use hosesim::Scenario;

/// Deterministic simulator for bandwidth-provisioned wireless VPN
/// topologies: provisioned multipath with failover, on-demand route
/// discovery, finite-bandwidth FIFO links, and energy accounting.
#[derive(Parser, Debug)]
#[command(name = "hosesim", version, about)]
struct Args {
    /// Scenario file (TOML).
    #[arg(short, long)]
    scenario: PathBuf,

    /// Output directory for CSV results and traces.
    #[arg(short, long, default_value = "out")]
    out: PathBuf,

    /// Override the scenario's base seed.
    #[arg(long)]
    seed: Option<u64>,

    /// Override the scenario's run count.
    #[arg(long)]
    runs: Option<u32>,

    /// Override the scenario's path selection strategy.
    #[arg(long)]
    policy: Option<String>,

    /// Sweep one parameter over several values, e.g.
    /// "packet_size=256,512,1024". Parameters: packet_size (bytes),
    /// flow_interval (ns), failure_time (s).
    #[arg(long, value_name = "PARAM=V1,V2,..")]
    sweep: Option<String>,

    /// Record per-event traces under run-<k>/events.tsv.
    #[arg(long)]
    trace: bool,

    /// Print nothing but errors.
    #[arg(short, long)]
    quiet: bool,
}

fn parse_sweep(text: &str) -> Result<(String, Vec<f64>)> {
    let (param, values) = text
        .split_once('=')
        .with_context(|| format!("sweep {text:?} is not of the form param=v1,v2"))?;
    if !SWEEP_PARAMS.contains(&param) {
        bail!("unknown sweep parameter {param:?}, expected one of {SWEEP_PARAMS:?}");
    }
    let values = values
        .split(',')
        .map(|v| {
            v.trim()
                .parse::<f64>()
                .with_context(|| format!("sweep value {v:?} is not a number"))
        })
        .collect::<Result<Vec<f64>>>()?;
    if values.is_empty() {
        bail!("sweep {text:?} lists no values");
    }
    Ok((param.to_string(), values))
}

fn print_output(args: &Args, heading: Option<&str>, output: &ScenarioOutput) {
    if args.quiet {
        return;
    }
    if let Some(heading) = heading {
        println!("== {heading} ==");
    }
    print!("{}", format_summary(&output.rows));
    if let Some(reservations) = &output.reservations {
        println!("reserved bandwidth (hose bounds):");
        for (link, bps) in reservations {
            println!("  {link:<12} {bps:.0} bit/s");
        }
    }
    println!(
        "{} run(s), base seed {}, results in {}",
        output.runs.reports.len(),
        output.base_seed,
        args.out.display()
    );
}

fn main() -> Result<()> {
    let args = Args::parse();
    let scenario = Scenario::load(&args.scenario)
        .with_context(|| format!("loading {}", args.scenario.display()))?;
    let opts = RunOptions {
        seed: args.seed,
        runs: args.runs,
        policy: args.policy.clone(),
        trace: args.trace,
    };

    match &args.sweep {
        Some(sweep) => {
            let (param, values) = parse_sweep(sweep)?;
            let results = run_sweep(&scenario, &opts, &param, &values, &args.out)?;
            for (value, output) in &results {
                print_output(&args, Some(&format!("{param} = {value}")), output);
            }
        }
        None => {
            let output = run_and_write(&scenario, &opts, &args.out)?;
            print_output(&args, None, &output);
        }
    }
    Ok(())
}
