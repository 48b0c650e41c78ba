use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use phonon_cli::{run_scenario, Scenario, ScenarioSpec};
use tracing_subscriber::EnvFilter;

#[derive(Parser)]
#[command(name = "phonon", version, about = "Two-node qubit and phonon simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario and write its artifacts.
    Run(RunArgs),
    /// Print the reference configuration as TOML.
    DefaultConfig,
}

#[derive(Args)]
struct RunArgs {
    scenario: Scenario,
    #[arg(long)]
    config: PathBuf,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 3000)]
    shots: u64,
    #[arg(long)]
    out: PathBuf,
    /// Exit with status 1 if any acceptance check fails.
    #[arg(long)]
    check: bool,
    /// Override a config value, e.g. `device.a.g_ge=6e6`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Skip SVG output.
    #[arg(long)]
    no_plots: bool,
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("warn")))
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    match cli.command {
        Command::DefaultConfig => {
            print!("{}", phonon_cli::Config::reference().to_toml());
            ExitCode::SUCCESS
        }
        Command::Run(args) => run(args),
    }
}

fn run(args: RunArgs) -> ExitCode {
    let spec = ScenarioSpec {
        scenario: args.scenario,
        config: args.config,
        seed: args.seed,
        shots: args.shots,
        out: args.out,
        overrides: args.overrides,
        plots: !args.no_plots,
    };
    let start = Instant::now();
    let report = match run_scenario(&spec) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                eprintln!("  caused by: {s}");
                source = s.source();
            }
            return ExitCode::from(2);
        }
    };
    eprintln!("{} finished in {:.1} s", spec.scenario, start.elapsed().as_secs_f64());
    for (k, v) in &report.metrics {
        println!("{k} = {v}");
    }
    for c in &report.checks {
        println!(
            "{} {} = {} (expected [{}, {}])",
            if c.pass { "PASS" } else { "FAIL" },
            c.name,
            c.value,
            c.lo,
            c.hi
        );
    }
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    if args.check && !report.passed {
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
