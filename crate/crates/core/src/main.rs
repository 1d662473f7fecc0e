use std::path::{Path, PathBuf};
use std::{fs, process};

use clap::{Parser, Subcommand};

use tunnelsim::harness::{
    self, built_in, built_in_scenarios, render_summary, render_sweep_csv, render_delay_table_csv,
    render_trace_csv, run_resolved, HarnessError, Scenario,
};
use tunnelsim::netmodel::validate_non_overlapping;
use tunnelsim::policies::Policy;
use tunnelsim::region::{self, RegionError};

#[derive(Parser)]
#[command(
    name = "tunnelsim",
    version,
    about = "Slotted-time simulator for threshold-gated routing over tunnel overlays"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run one scenario and print (or save) its summary.
    Run(RunArgs),
    /// Run a scenario across load multipliers, policies, and seeds.
    Sweep(SweepArgs),
    /// Solve the throughput region for a scenario's demand.
    Region(ScenarioArg),
    /// Mean-delay table on the two-commodity example, per discipline.
    DelayTable(TableArgs),
    /// Check a scenario: overlay constants, thresholds, overlap report.
    Validate(ScenarioArg),
    /// List the built-in scenarios.
    Scenarios,
    /// Print a built-in scenario as TOML, ready to edit.
    Export(ExportArgs),
}

#[derive(clap::Args)]
struct ScenarioArg {
    /// Built-in scenario name or path to a TOML file.
    scenario: String,
}

#[derive(clap::Args)]
struct RunArgs {
    /// Built-in scenario name or path to a TOML file.
    scenario: String,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    slots: Option<u64>,
    /// bpt, bpt2, bpo, sp, rand-flow, bp, or bpsp.
    #[arg(long)]
    policy: Option<String>,
    /// fifo, lqf, strict, or hlpps.
    #[arg(long)]
    discipline: Option<String>,
    /// Session order for the strict discipline, highest first.
    #[arg(long, value_delimiter = ',')]
    priority: Option<Vec<u32>>,
    /// Injection gate override (must be at least the derived floor).
    #[arg(long)]
    gate: Option<u64>,
    /// Accept a gate below the derived floor (for sweeps past the theory).
    #[arg(long)]
    allow_low_gate: bool,
    /// Pad short injections with discardable packets.
    #[arg(long)]
    dummy_packets: bool,
    /// Write the per-slot trace CSV here.
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Write the summary here instead of stdout.
    #[arg(long)]
    summary: Option<PathBuf>,
}

#[derive(clap::Args)]
struct SweepArgs {
    /// Built-in scenario name or path to a TOML file.
    scenario: String,
    /// Comma-separated policy names.
    #[arg(long, value_delimiter = ',', default_value = "bpt")]
    policies: Vec<String>,
    /// Comma-separated rate multipliers applied to every session.
    #[arg(long, value_delimiter = ',', default_value = "1.0")]
    multipliers: Vec<f64>,
    /// Comma-separated seeds.
    #[arg(long, value_delimiter = ',', default_value = "1")]
    seeds: Vec<u64>,
    /// Write the CSV here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(clap::Args)]
struct TableArgs {
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 200_000)]
    slots: u64,
    /// Write the CSV here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(clap::Args)]
struct ExportArgs {
    /// Built-in scenario name.
    name: String,
    /// Write the TOML here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = dispatch(cli.cmd) {
        eprintln!("error: {e}");
        process::exit(1);
    }
}

fn dispatch(cmd: Cmd) -> Result<(), HarnessError> {
    match cmd {
        Cmd::Run(args) => cmd_run(args),
        Cmd::Sweep(args) => cmd_sweep(args),
        Cmd::Region(args) => cmd_region(&args.scenario),
        Cmd::DelayTable(args) => {
            let rows = harness::delay_table(args.seed, args.slots)?;
            emit(args.out.as_deref(), &render_delay_table_csv(&rows))
        }
        Cmd::Validate(args) => cmd_validate(&args.scenario),
        Cmd::Scenarios => {
            for sc in built_in_scenarios() {
                println!(
                    "{}  policy={} discipline={} slots={} sessions={}",
                    sc.name,
                    sc.policy,
                    sc.discipline,
                    sc.slots,
                    sc.sessions
                        .iter()
                        .map(|s| format!("{}:{}->{}@{}", s.id, s.source, s.dest, s.rate))
                        .collect::<Vec<_>>()
                        .join(",")
                );
            }
            Ok(())
        }
        Cmd::Export(args) => {
            let sc = built_in(&args.name)
                .ok_or_else(|| HarnessError::UnknownBuiltin(args.name.clone()))?;
            emit(args.out.as_deref(), &sc.to_toml_string()?)
        }
    }
}

/// Built-in name first, then the filesystem.
fn load_scenario(spec: &str) -> Result<Scenario, HarnessError> {
    if let Some(sc) = built_in(spec) {
        return Ok(sc);
    }
    let path = Path::new(spec);
    if path.exists() {
        return Scenario::load(path);
    }
    Err(HarnessError::UnknownBuiltin(spec.to_string()))
}

fn emit(out: Option<&Path>, text: &str) -> Result<(), HarnessError> {
    match out {
        Some(path) => fs::write(path, text)?,
        None => print!("{text}"),
    }
    Ok(())
}

fn cmd_run(args: RunArgs) -> Result<(), HarnessError> {
    let mut sc = load_scenario(&args.scenario)?;
    if let Some(v) = args.seed {
        sc.seed = v;
    }
    if let Some(v) = args.slots {
        sc.slots = v;
    }
    if let Some(v) = args.policy {
        sc.policy = v;
    }
    if let Some(v) = args.discipline {
        sc.discipline = v;
    }
    if let Some(v) = args.priority {
        sc.priority = v;
    }
    if let Some(v) = args.gate {
        sc.gate = Some(v);
    }
    sc.allow_low_gate |= args.allow_low_gate;
    sc.dummy_packets |= args.dummy_packets;

    let mut resolved = sc.resolve()?;
    resolved.config.record_trace = args.trace.is_some();
    let outcome = run_resolved(&sc.name, resolved)?;

    if let Some(path) = &args.trace {
        let rows = outcome.result.trace.as_deref().unwrap_or(&[]);
        fs::write(path, render_trace_csv(rows, &outcome.tunnel_labels))?;
    }
    emit(
        args.summary.as_deref(),
        &render_summary(&outcome.result.summary, Some(&outcome.stability)),
    )
}

fn cmd_sweep(args: SweepArgs) -> Result<(), HarnessError> {
    let sc = load_scenario(&args.scenario)?;
    let policies: Vec<Policy> = args
        .policies
        .iter()
        .map(|p| Policy::parse(p).ok_or_else(|| HarnessError::UnknownPolicy(p.clone())))
        .collect::<Result<_, _>>()?;
    let rows = harness::sweep(&sc, &policies, &args.multipliers, &args.seeds)?;
    emit(args.out.as_deref(), &render_sweep_csv(&rows))
}

fn cmd_region(spec: &str) -> Result<(), HarnessError> {
    let sc = load_scenario(spec)?;
    let resolved = sc.resolve()?;
    let ov = &resolved.overlay;
    let demands = &resolved.sessions;

    let report = region::feasibility(ov, demands)?;
    println!("epsilon {:.6}", report.epsilon);
    println!("interior {}", report.epsilon > 1e-9);

    match region::boundary(ov, demands) {
        Ok(rho) => println!("rho-star {rho:.6}"),
        Err(RegionError::EmptyDirection) => println!("rho-star n/a (all rates zero)"),
        Err(e) => return Err(e.into()),
    }

    if report.epsilon > 1e-9 {
        let dec = region::decomposition_for_oracle(ov, demands)?;
        println!("decomposition-slack {:.6}", dec.epsilon);
        for (&(tunnel, session), &f) in &dec.flows {
            println!("flow {} session {} {f:.6}", ov.tunnel_label(tunnel), session);
        }
    }
    Ok(())
}

fn cmd_validate(spec: &str) -> Result<(), HarnessError> {
    let sc = load_scenario(spec)?;
    let resolved = sc.resolve()?;
    let ov = &resolved.overlay;

    println!("scenario {}", sc.name);
    println!("nodes {}", ov.net.node_count());
    println!("links {}", ov.net.links().len());
    println!("routers {}", ov.routers.len());
    println!("tunnels {}", ov.tunnels.len());
    for t in &ov.tunnels {
        println!(
            "tunnel {} forwarders {} input-cap {} bottleneck {} max-cap {} loaded-threshold {}",
            ov.tunnel_label(t.id),
            t.forwarder_count,
            t.input_capacity,
            t.bottleneck_capacity,
            t.max_capacity,
            t.loaded_threshold
        );
    }

    let overlap = validate_non_overlapping(ov);
    println!("non-overlapping {}", overlap.is_ok());
    for c in &overlap.conflicts {
        let l = ov.net.link(c.link);
        println!(
            "conflict {} {} link {}->{}",
            ov.tunnel_label(c.tunnel_a),
            ov.tunnel_label(c.tunnel_b),
            ov.net.name_of(l.tail),
            ov.net.name_of(l.head)
        );
    }

    let ts = resolved.config.thresholds;
    println!("loaded {}", ts.loaded);
    println!("gate {}", ts.gate);
    println!("backlog-bound {}", ts.backlog_bound);
    Ok(())
}
