//! `speckle`: simulate, analyze, retrieve, validate and report.
//!
//! Exit codes: 0 success, 1 invalid input or failed acceptance criteria,
//! 2 numerical failure, 3 I/O or file-format failure.

mod analyze;
mod error;
mod report;
mod retrieve;
mod scenario;
mod simulate;
mod validate;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use speckle_core::validation::Tier;

use crate::error::{CliResult, EXIT_OK, EXIT_VALIDATION};
use crate::scenario::Scenario;

#[derive(Debug, Parser)]
#[command(name = "speckle", version, about = "Speckle covariance imaging through random media")]
struct Cli {
    /// Directory that scenario output paths are relative to.
    #[arg(long, global = true, env = "SPECKLE_OUTPUT_ROOT", default_value = ".")]
    output_root: PathBuf,

    /// Worker threads (default: available parallelism). Results do not
    /// depend on this value.
    #[arg(long, global = true)]
    workers: Option<usize>,

    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum TierArg {
    Fast,
    Full,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the Monte Carlo scan of a scenario and write the intensity stack.
    Simulate {
        scenario: PathBuf,
        /// Output directory (default: output root joined with output.directory).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Covariance maps and speckle diagnostics from a simulated stack.
    Analyze {
        scenario: PathBuf,
        /// Stack directory (default: <out>/stack).
        #[arg(long)]
        stack: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Accept a stack produced by a different scenario.
        #[arg(long)]
        force: bool,
        /// Append the self-averaged analytic prediction and score it.
        #[arg(long)]
        compare_analytic: bool,
        /// Realization used for the single-realization map.
        #[arg(long, default_value_t = 0, conflicts_with = "ensemble")]
        realization: usize,
        /// Average the single-realization maps over all realizations.
        #[arg(long)]
        ensemble: bool,
    },
    /// Reconstruct the mask from an offset covariance CSV.
    Retrieve {
        csv: PathBuf,
        /// Scenario supplying retrieval settings and the reference mask.
        #[arg(long)]
        scenario: Option<PathBuf>,
        /// Score the reconstruction against the scenario mask after registration.
        #[arg(long, requires = "scenario")]
        truth: bool,
        /// Accept a CSV produced by a different scenario.
        #[arg(long)]
        force: bool,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Transverse dimension of the offsets (default: inferred).
        #[arg(long)]
        dim: Option<usize>,
        /// Offset spacing (default: smallest non-zero offset).
        #[arg(long)]
        step: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        restarts: Option<usize>,
        #[arg(long)]
        chains: Option<usize>,
    },
    /// Run the acceptance suite.
    Validate {
        #[arg(long, value_enum, default_value = "fast")]
        tier: TierArg,
        #[arg(long, default_value_t = 20_240_611)]
        seed: u64,
        /// Include the two-dimensional double-slit demo (full tier).
        #[arg(long)]
        demo_2d: bool,
        /// JSON report path (default: <output root>/validation_<tier>.json).
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Summarize the artifacts of an output directory.
    Report { dir: PathBuf },
}

fn scenario_out(root: &Path, scenario: &Path, out: Option<PathBuf>) -> CliResult<PathBuf> {
    match out {
        Some(o) => Ok(o),
        None => Ok(Scenario::load(scenario)?.output_dir(root)),
    }
}

fn run(cli: Cli) -> CliResult<()> {
    if let Some(n) = cli.workers {
        if n == 0 {
            return Err(error::CliError::Usage("--workers must be at least 1".into()));
        }
        // fails only if a pool already exists, which cannot happen here
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let root = cli.output_root;
    match cli.command {
        Command::Simulate { scenario, out } => {
            let out = scenario_out(&root, &scenario, out)?;
            simulate::simulate(&scenario, &out)
        }
        Command::Analyze {
            scenario,
            stack,
            out,
            force,
            compare_analytic,
            realization,
            ensemble,
        } => {
            let out = scenario_out(&root, &scenario, out)?;
            analyze::analyze(&analyze::AnalyzeArgs {
                scenario,
                stack,
                out,
                force,
                compare_analytic,
                realization,
                ensemble,
            })
        }
        Command::Retrieve {
            csv,
            scenario,
            truth,
            force,
            out,
            dim,
            step,
            seed,
            restarts,
            chains,
        } => retrieve::retrieve(&retrieve::RetrieveArgs {
            csv,
            scenario,
            truth,
            force,
            out,
            dim,
            step,
            seed,
            restarts,
            chains,
        }),
        Command::Validate {
            tier,
            seed,
            demo_2d,
            json,
        } => {
            let (tier, name) = match tier {
                TierArg::Fast => (Tier::Fast, "fast"),
                TierArg::Full => (Tier::Full, "full"),
            };
            let json = json.unwrap_or_else(|| root.join(format!("validation_{name}.json")));
            validate::validate(tier, seed, demo_2d, &json)
        }
        Command::Report { dir } => report::report(&dir),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            // help and version go to stdout and are not failures
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_VALIDATION } else { EXIT_OK });
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::from(EXIT_OK),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
