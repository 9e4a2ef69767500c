use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use nsstat_cli::checks::{run_suite, SUITES};
use nsstat_cli::config::{parse_config, RunConfig};
use nsstat_cli::{commands, CliError};
use serde_json::{json, Value};

/// Ensemble Navier–Stokes solver and statistical-solution diagnostics.
///
/// Exit codes: 0 success, 1 runtime error, 2 configuration error, 3 verification failure.
/// Errors are written to stderr as JSON.
#[derive(Parser, Debug)]
#[command(name = "nsstat", version, about)]
struct Cli {
    /// Run configuration (JSON, validated against the published schema).
    #[arg(long, short, global = true)]
    config: Option<PathBuf>,

    /// Print the validated configuration with every default filled in, then exit.
    #[arg(long, global = true)]
    print_config: bool,

    /// Worker threads; falls back to NSE_STAT_THREADS, then to all cores.
    #[arg(long, global = true, env = "NSE_STAT_THREADS")]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Sample the initial measure into an ensemble directory.
    Synth {
        /// Output ensemble directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Evolve an ensemble and write a trajectory directory.
    Simulate {
        /// Ensemble directory to evolve; the configured measure is sampled when absent.
        #[arg(long)]
        input: Option<PathBuf>,
        /// Output trajectory directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Structure functions, diagonal continuity and third-order bounds of a trajectory
    /// or ensemble directory.
    Stats {
        /// Trajectory or ensemble directory.
        #[arg(long)]
        input: PathBuf,
        /// Output directory for CSV and JSON files.
        #[arg(long)]
        out: PathBuf,
        /// Golden file of S2_par values for the first snapshot; mismatches exit with 3.
        #[arg(long)]
        golden: Option<PathBuf>,
        /// Regenerate the golden file from the brute-force oracle instead of comparing.
        #[arg(long, requires = "golden")]
        bless: bool,
    },
    /// Kármán–Howarth–Monin budgets (trace, full and longitudinal forms) of a trajectory.
    Khm {
        /// Trajectory directory.
        #[arg(long)]
        input: PathBuf,
        /// JSON output file; the report is printed to stdout either way.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Vanishing-viscosity sweep over the configured ladder.
    Vv {
        /// Root directory; the report goes to OUT/{run_id}.
        #[arg(long, default_value = ".")]
        out: PathBuf,
        /// Print the ladder plan without computing.
        #[arg(long)]
        plan_only: bool,
    },
    /// Built-in verification suites; exit 0 iff every selected suite passes.
    Check {
        /// Suite to run; repeat for several. All suites when omitted.
        #[arg(long, value_parser = clap::builder::PossibleValuesParser::new(SUITES))]
        suite: Vec<String>,
    },
}

fn load(cli: &Cli) -> Result<RunConfig, CliError> {
    match &cli.config {
        Some(p) => parse_config(p),
        None => Err(CliError::config(vec!["--config is required for this command".into()])),
    }
}

fn execute(cli: &Cli) -> Result<Value, CliError> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::config(vec!["threads must be ≥ 1".into()]));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Runtime(e.to_string()))?;
    }
    if cli.print_config {
        let cfg = load(cli)?;
        return Ok(serde_json::to_value(&cfg).expect("config serializes"));
    }
    match &cli.command {
        None => Err(CliError::config(vec!["no subcommand given; see --help".into()])),
        Some(Command::Synth { out }) => commands::synth(&load(cli)?, out),
        Some(Command::Simulate { input, out }) => commands::simulate(&load(cli)?, input.as_deref(), out),
        Some(Command::Stats { input, out, golden, bless }) => {
            commands::stats(&load(cli)?, input, out, golden.as_deref(), *bless)
        }
        Some(Command::Khm { input, out }) => commands::khm(&load(cli)?, input, out.as_deref()),
        Some(Command::Vv { out, plan_only }) => commands::vv(&load(cli)?, out, *plan_only),
        Some(Command::Check { suite }) => {
            let names: Vec<String> = if suite.is_empty() {
                SUITES.iter().map(|s| s.to_string()).collect()
            } else {
                suite.clone()
            };
            let results = names.iter().map(|s| run_suite(s)).collect::<Result<Vec<_>, _>>()?;
            let report = json!({
                "command": "check",
                "code_version": nsstat::io::CODE_VERSION,
                "suites": results,
            });
            if results.iter().all(|r| r.passed) {
                Ok(report)
            } else {
                Err(CliError::Verification(report))
            }
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(v) => {
            let text = serde_json::to_string_pretty(&v).expect("output serializes");
            let _ = writeln!(std::io::stdout().lock(), "{text}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            let _ = writeln!(std::io::stderr().lock(), "{}", e.to_json());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
