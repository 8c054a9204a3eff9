use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use manet_sim::config::{ScenarioConfig, TrafficKind};
use manet_sim::routing::Protocol;
use manet_sim::metrics::CSV_HEADER;
use manet_sim::scenario::{run_one_traced, RunReport};
use manet_sim::stats::mean_ci95;

/// Gossip-routing simulator for mobile ad hoc networks.
#[derive(Parser)]
#[command(name = "manet-sim", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Execute a single scenario and print one CSV row.
    Run(CommonArgs),
    /// Sweep one axis, several seeds per point, and print a CSV table.
    Sweep(SweepArgs),
}

#[derive(Args)]
struct CommonArgs {
    /// Scenario file (flat `key = value` lines, `#` comments).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed; overrides the config file.
    #[arg(long)]
    seed: Option<u64>,
    /// Write CSV here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write a per-event trace (t_us, node, kind, detail; tab-separated).
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Echo progress and per-run summaries to stderr.
    #[arg(long)]
    verbose: bool,
    /// Inline overrides, e.g. `--set protocol=aeerg --set n_nodes=80`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Axis {
    /// Simulation time: 25, 50, 75, 100, 150, 200 s.
    SimTime,
    /// Node count: 10 through 100 in steps of 10.
    Nodes,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Which scenario axis to sweep.
    #[arg(long, value_enum)]
    axis: Axis,
}

fn load_config(args: &CommonArgs) -> Result<ScenarioConfig, String> {
    let mut cfg = ScenarioConfig::default();
    if let Some(path) = &args.config {
        let body = std::fs::read_to_string(path)
            .map_err(|e| format!("cannot read {}: {e}", path.display()))?;
        cfg.apply_str(&body).map_err(|e| e.to_string())?;
    }
    for s in &args.sets {
        let Some((k, v)) = s.split_once('=') else {
            return Err(format!("--set expects KEY=VALUE, got `{s}`"));
        };
        cfg.set(k.trim(), v.trim()).map_err(|e| format!("--set {s}: {e}"))?;
    }
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    cfg.validate().map_err(|e| e.to_string())?;
    Ok(cfg)
}

fn open_out(path: &Option<PathBuf>) -> Result<Box<dyn Write>, String> {
    match path {
        Some(p) => {
            let f = File::create(p).map_err(|e| format!("cannot create {}: {e}", p.display()))?;
            Ok(Box::new(BufWriter::new(f)))
        }
        None => Ok(Box::new(std::io::stdout().lock())),
    }
}

fn open_trace(path: &Option<PathBuf>) -> Result<Option<Box<dyn Write>>, String> {
    match path {
        Some(p) => {
            let f = File::create(p).map_err(|e| format!("cannot create {}: {e}", p.display()))?;
            Ok(Some(Box::new(BufWriter::new(f))))
        }
        None => Ok(None),
    }
}

fn write_preamble(out: &mut dyn Write, cfg: &ScenarioConfig) -> std::io::Result<()> {
    for line in cfg.echo() {
        writeln!(out, "# {line}")?;
    }
    writeln!(out, "{CSV_HEADER}")
}

fn execute(cfg: &ScenarioConfig, trace: Option<Box<dyn Write>>) -> Result<RunReport, String> {
    run_one_traced(cfg, trace).map_err(|e| e.to_string())
}

fn cmd_run(args: &CommonArgs) -> Result<(), String> {
    let cfg = load_config(args)?;
    let trace = open_trace(&args.trace)?;
    let report = execute(&cfg, trace)?;
    let mut out = open_out(&args.out)?;
    write_preamble(out.as_mut(), &cfg).map_err(|e| e.to_string())?;
    writeln!(out, "{}", report.row.to_csv()).map_err(|e| e.to_string())?;
    if args.verbose {
        eprintln!(
            "run: {} events, sent={} received={} inflight={}",
            report.executed_events, report.row.sent, report.row.received, report.row.inflight
        );
    }
    Ok(())
}

fn cmd_sweep(args: &SweepArgs) -> Result<(), String> {
    let base = load_config(&args.common)?;
    if args.common.trace.is_some() {
        return Err("--trace applies to single runs only".into());
    }
    let points: Vec<ScenarioConfig> = match args.axis {
        Axis::SimTime => [25.0, 50.0, 75.0, 100.0, 150.0, 200.0]
            .iter()
            .map(|&t| {
                let mut c = base.clone();
                c.sim_time_s = t;
                if c.warmup_s >= t {
                    c.warmup_s = 0.0;
                }
                c
            })
            .collect(),
        Axis::Nodes => (1..=10)
            .map(|k| {
                let mut c = base.clone();
                c.n_nodes = 10 * k;
                c
            })
            .collect(),
    };
    let mut out = open_out(&args.common.out)?;
    write_preamble(out.as_mut(), &base).map_err(|e| e.to_string())?;
    for point in &points {
        for protocol in [Protocol::Gsp, Protocol::Aeerg] {
            for traffic in [TrafficKind::Cbr, TrafficKind::Tcp] {
                let mut pdrs = Vec::new();
                // seeds restart per point so any row is re-runnable in
                // isolation and rows pair up across protocol/traffic
                for i in 0..point.runs_per_point {
                    let mut cfg = point.clone();
                    cfg.protocol = protocol;
                    cfg.traffic = traffic;
                    cfg.seed = base.seed + i as u64;
                    let report = execute(&cfg, None)?;
                    writeln!(out, "{}", report.row.to_csv()).map_err(|e| e.to_string())?;
                    pdrs.push(report.row.pdr);
                }
                if args.common.verbose {
                    let (mean, half) = mean_ci95(&pdrs);
                    let label = match args.axis {
                        Axis::SimTime => format!("sim_time={}s", point.sim_time_s),
                        Axis::Nodes => format!("nodes={}", point.n_nodes),
                    };
                    eprintln!(
                        "{label} {} {}: pdr {mean:.4} +/- {half:.4} (95% CI, n={})",
                        protocol.label(),
                        traffic.label(),
                        pdrs.len()
                    );
                }
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run(args) => cmd_run(args),
        Command::Sweep(args) => cmd_sweep(&args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(msg) => {
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}
