//! `airstack` command-line driver.
//!
//! Exit codes: 0 success, 1 unreadable input or I/O failure, 2 invalid
//! scenario, 3 run aborted on an invariant violation.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::Serialize;

use airstack::domain::{validate_scenario, QosProfile, RatKind, RatProfile, ScenarioConfig};
use airstack::engine::{self, EngineError, MetricsReport, RunOptions, Trace, TraceKind};

const EXIT_IO: u8 = 1;
const EXIT_INVALID: u8 = 2;
const EXIT_ABORTED: u8 = 3;

#[derive(Parser)]
#[command(name = "airstack", version, about = "Multi-RAT air interface stack simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check a scenario file against every configuration rule.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Simulate one scenario and write its metrics report.
    Run(RunArgs),
    /// Simulate a range of seeds in parallel and aggregate the reports.
    Sweep {
        #[command(flatten)]
        run: RunArgs,
        /// Number of consecutive seeds, starting at --seed.
        #[arg(long, default_value_t = 10)]
        count: u64,
    },
    /// Print the embedded RAT and QoS defaults as JSON.
    ListDefaults,
}

#[derive(Args, Clone)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Overrides the scenario's seed (which itself defaults to 0).
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    duration_ms: Option<u64>,
    /// Report destination; standard output when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    format: Format,
    #[arg(long, default_value_t = TraceKind::None)]
    trace: TraceKind,
    /// Trace destination. Defaults to `<out>.<kind>.csv` next to --out, or
    /// standard error without --out.
    #[arg(long)]
    trace_out: Option<PathBuf>,
    /// Record invariant violations in the report instead of aborting.
    #[arg(long)]
    keep_going: bool,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Csv,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Validate { config } => validate(&config),
        Command::Run(args) => run(&args),
        Command::Sweep { run, count } => sweep(&run, count),
        Command::ListDefaults => list_defaults(),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) if is_broken_pipe(&e) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_IO)
        }
    }
}

fn is_broken_pipe(e: &anyhow::Error) -> bool {
    e.downcast_ref::<io::Error>()
        .is_some_and(|e| e.kind() == io::ErrorKind::BrokenPipe)
}

fn load(path: &Path) -> anyhow::Result<ScenarioConfig> {
    Ok(ScenarioConfig::load(path)?)
}

fn validate(path: &Path) -> anyhow::Result<u8> {
    let cfg = load(path)?;
    let result = validate_scenario(&cfg);
    if result.is_ok() {
        println!("ok");
        return Ok(0);
    }
    for v in result.violations() {
        eprintln!("{v}");
    }
    Ok(EXIT_INVALID)
}

fn options(args: &RunArgs, seed: Option<u64>) -> RunOptions {
    RunOptions {
        seed,
        duration_ms: args.duration_ms,
        keep_going: args.keep_going,
    }
}

fn trace_sink(args: &RunArgs, seed_suffix: Option<u64>) -> anyhow::Result<Trace> {
    if args.trace == TraceKind::None {
        return Ok(Trace::disabled());
    }
    let path = match (&args.trace_out, &args.out) {
        (Some(p), _) => Some(p.clone()),
        (None, Some(out)) => Some(out.with_extension(format!("{}.csv", args.trace))),
        (None, None) => None,
    };
    let path = match (path, seed_suffix) {
        (Some(p), Some(seed)) => Some(with_seed(&p, seed)),
        (p, _) => p,
    };
    let out: Box<dyn Write + Send> = match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(&p).with_context(|| format!("creating {}", p.display()))?,
        )),
        None => Box::new(io::stderr()),
    };
    Ok(Trace::new(args.trace, Some(out)))
}

/// `dir/name.ext` becomes `dir/name-seed<k>.ext`.
fn with_seed(p: &Path, seed: u64) -> PathBuf {
    let stem = p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let name = match p.extension() {
        Some(ext) => format!("{stem}-seed{seed}.{}", ext.to_string_lossy()),
        None => format!("{stem}-seed{seed}"),
    };
    p.with_file_name(name)
}

fn emit(text: &str, out: Option<&Path>) -> anyhow::Result<()> {
    match out {
        Some(p) => std::fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            let mut stdout = io::stdout().lock();
            stdout.write_all(text.as_bytes())?;
            Ok(stdout.flush()?)
        }
    }
}

fn render(report: &MetricsReport, format: Format) -> String {
    match format {
        Format::Json => report.to_json(),
        Format::Csv => report.to_csv(),
    }
}

fn run(args: &RunArgs) -> anyhow::Result<u8> {
    let cfg = load(&args.config)?;
    let trace = trace_sink(args, None)?;
    match engine::run(&cfg, &options(args, args.seed), trace) {
        Ok(report) => {
            emit(&render(&report, args.format), args.out.as_deref())?;
            Ok(0)
        }
        Err(EngineError::Invalid(violations)) => {
            for v in violations {
                eprintln!("{v}");
            }
            Ok(EXIT_INVALID)
        }
        Err(EngineError::Aborted {
            time,
            diagnostic,
            report,
        }) => {
            eprintln!("aborted at {} ms: {diagnostic}", time.as_ms());
            emit(&render(&report, args.format), args.out.as_deref())?;
            Ok(EXIT_ABORTED)
        }
        Err(e) => Err(e.into()),
    }
}

#[derive(Serialize)]
struct SeedSummary {
    seed: u64,
    aborted: Option<String>,
    offered: u64,
    delivered: u64,
    delivery_ratio: f64,
    throughput_bps: f64,
    in_order_violations: u64,
    duplicates_discarded: u64,
    harq_drops: u64,
    handovers: u64,
    conservation_ok: bool,
}

#[derive(Serialize, Default)]
struct Spread {
    mean: f64,
    min: f64,
    max: f64,
}

impl Spread {
    fn of(values: impl Iterator<Item = f64> + Clone) -> Self {
        let n = values.clone().count();
        if n == 0 {
            return Spread::default();
        }
        Spread {
            mean: values.clone().sum::<f64>() / n as f64,
            min: values.clone().fold(f64::INFINITY, f64::min),
            max: values.fold(f64::NEG_INFINITY, f64::max),
        }
    }
}

#[derive(Serialize)]
struct SweepReport {
    scenario_hash: String,
    runs: Vec<SeedSummary>,
    delivery_ratio: Spread,
    throughput_bps: Spread,
    in_order_violations: u64,
    aborted_runs: usize,
}

fn summarize(seed: u64, report: &MetricsReport, aborted: Option<String>) -> SeedSummary {
    let t = &report.totals;
    SeedSummary {
        seed,
        aborted,
        offered: t.fates.offered,
        delivered: t.fates.delivered,
        delivery_ratio: t.delivery_ratio,
        throughput_bps: t.throughput_bps,
        in_order_violations: t.in_order_violations,
        duplicates_discarded: t.duplicates_discarded,
        harq_drops: t.harq_drops,
        handovers: t.handovers,
        conservation_ok: t.conservation_ok,
    }
}

fn sweep(args: &RunArgs, count: u64) -> anyhow::Result<u8> {
    let cfg = load(&args.config)?;
    let checked = validate_scenario(&cfg);
    if !checked.is_ok() {
        for v in checked.violations() {
            eprintln!("{v}");
        }
        return Ok(EXIT_INVALID);
    }
    let first = args.seed.unwrap_or(cfg.seed);
    let seeds: Vec<u64> = (first..first.saturating_add(count)).collect();
    let results: Vec<anyhow::Result<SeedSummary>> = seeds
        .par_iter()
        .map(|&seed| {
            let trace = trace_sink(args, Some(seed))?;
            match engine::run(&cfg, &options(args, Some(seed)), trace) {
                Ok(r) => Ok(summarize(seed, &r, None)),
                Err(EngineError::Aborted { diagnostic, report, .. }) => Ok(summarize(seed, &report, Some(diagnostic))),
                Err(e) => Err(e.into()),
            }
        })
        .collect();
    let runs = results.into_iter().collect::<anyhow::Result<Vec<_>>>()?;
    let aborted_runs = runs.iter().filter(|r| r.aborted.is_some()).count();
    let report = SweepReport {
        scenario_hash: cfg.canonical_hash(),
        delivery_ratio: Spread::of(runs.iter().map(|r| r.delivery_ratio)),
        throughput_bps: Spread::of(runs.iter().map(|r| r.throughput_bps)),
        in_order_violations: runs.iter().map(|r| r.in_order_violations).sum(),
        aborted_runs,
        runs,
    };
    let text = match args.format {
        Format::Json => {
            let mut s = serde_json::to_string_pretty(&report)?;
            s.push('\n');
            s
        }
        Format::Csv => {
            let mut s = String::from("seed,aborted,offered,delivered,delivery_ratio,throughput_bps,in_order_violations,duplicates_discarded,harq_drops,handovers,conservation_ok\n");
            for r in &report.runs {
                s.push_str(&format!(
                    "{},{},{},{},{},{},{},{},{},{},{}\n",
                    r.seed,
                    r.aborted.is_some(),
                    r.offered,
                    r.delivered,
                    r.delivery_ratio,
                    r.throughput_bps,
                    r.in_order_violations,
                    r.duplicates_discarded,
                    r.harq_drops,
                    r.handovers,
                    r.conservation_ok
                ));
            }
            s
        }
    };
    emit(&text, args.out.as_deref())?;
    for r in report.runs.iter().filter(|r| r.aborted.is_some()) {
        eprintln!("seed {} aborted: {}", r.seed, r.aborted.as_deref().unwrap_or_default());
    }
    Ok(if aborted_runs > 0 { EXIT_ABORTED } else { 0 })
}

#[derive(Serialize)]
struct Defaults {
    rats: Vec<RatProfile>,
    qos: Vec<QosProfile>,
}

fn list_defaults() -> anyhow::Result<u8> {
    let d = Defaults {
        rats: vec![
            RatProfile::default_for(RatKind::LteLike, "lte"),
            RatProfile::default_for(RatKind::WifiLike, "wifi"),
            RatProfile::default_for(RatKind::FbmcLike, "fbmc"),
        ],
        qos: vec![QosProfile::xmbb(0.0), QosProfile::urc(), QosProfile::mmtc()],
    };
    let mut text = serde_json::to_string_pretty(&d)?;
    text.push('\n');
    emit(&text, None)?;
    Ok(0)
}
