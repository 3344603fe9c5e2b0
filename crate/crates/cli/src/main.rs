use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};
use drc_cli::{parse_cases, parse_horizons, ExperimentConfig, TraceMode};

#[derive(Parser)]
#[command(name = "drc-lab", version, about = "Regret experiments for adaptive disturbance response control")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the configured sweeps and write CSV tables and plots.
    Run(RunArgs),
    /// Check a configuration without simulating.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
}

#[derive(Args)]
struct RunArgs {
    /// TOML experiment file; built-in defaults when absent.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Comma-separated case numbers, e.g. `1,2,3`.
    #[arg(long)]
    cases: Option<String>,
    /// `a..b` (doubling from a to b) or a comma-separated list.
    #[arg(long)]
    horizons: Option<String>,
    /// Seeds per horizon.
    #[arg(long)]
    seeds: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads (0 uses every core).
    #[arg(long)]
    parallel: Option<usize>,
    #[arg(long, value_enum)]
    traces: Option<TraceArg>,
    /// Run the invariant self-test and exit.
    #[arg(long)]
    selftest: bool,
    /// Validate the effective configuration and exit.
    #[arg(long)]
    validate: bool,
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum TraceArg {
    None,
    FirstSeed,
    All,
}

fn effective_config(args: &RunArgs) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(args.config.as_deref(), std::env::vars())?;
    if let Some(c) = &args.cases {
        cfg.cases = parse_cases(c)?;
    }
    if let Some(h) = &args.horizons {
        cfg.horizons = parse_horizons(h)?;
    }
    if let Some(n) = args.seeds {
        cfg.seeds = n;
    }
    if let Some(o) = &args.out {
        cfg.out_dir = o.clone();
    }
    if let Some(p) = args.parallel {
        cfg.parallel = p;
    }
    if let Some(t) = args.traces {
        cfg.traces = match t {
            TraceArg::None => TraceMode::None,
            TraceArg::FirstSeed => TraceMode::FirstSeed,
            TraceArg::All => TraceMode::All,
        };
    }
    Ok(cfg)
}

fn report_validation(cfg: &ExperimentConfig) -> ExitCode {
    let problems = cfg.validate();
    if problems.is_empty() {
        ExitCode::SUCCESS
    } else {
        for p in &problems {
            eprintln!("{p}");
        }
        ExitCode::from(2)
    }
}

fn selftest(seed: u64) -> ExitCode {
    let results = drc_core::selftest::run_all(seed);
    for r in &results {
        println!("{r}");
    }
    let failed = results.iter().filter(|r| !r.passed).count();
    println!("{} checks, {failed} failed", results.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Validate { config } => {
            ExperimentConfig::load(Some(&config), std::env::vars()).map(|cfg| report_validation(&cfg))
        }
        Command::Run(args) => effective_config(&args).and_then(|cfg| {
            if args.selftest {
                return Ok(selftest(cfg.seed));
            }
            if args.validate {
                return Ok(report_validation(&cfg));
            }
            let report = drc_cli::run(&cfg)?;
            println!(
                "wrote {} files under {} ({} episodes)",
                report.files.len(),
                cfg.out_dir.display(),
                report.summaries.len()
            );
            if report.violations.is_empty() {
                Ok(ExitCode::SUCCESS)
            } else {
                for v in &report.violations {
                    eprintln!("violation: {v}");
                }
                Ok(ExitCode::from(3))
            }
        }),
    };
    outcome.unwrap_or_else(|e| {
        eprintln!("error: {e:#}");
        ExitCode::from(2)
    })
}
