//! `coxwatch`: batch runner for the corridor-surveillance pipeline.
//!
//! Every subcommand is a pure function of (configuration file, seed): it
//! writes plain CSV/JSON artifacts plus a closing `manifest.json` into the
//! output directory, removes everything it wrote if it fails, and exits 0
//! on success, 2 on configuration errors, 3 on data errors, and 4 on
//! numerical errors.

mod commands;
mod config;
mod outputs;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use coxwatch_core::{Error, Result};

use config::RunConfig;
use outputs::OutputSession;

#[derive(Debug, Parser)]
#[command(
    name = "coxwatch",
    version,
    about = "Spatial outlier surveillance for a 1-D maritime corridor",
    long_about = "Models normal vessel activity along a corridor as a log-Gaussian Cox \
                  process, screens arrivals for commission outliers with a two-stage \
                  stochastic rule, quantifies the approximation error of its closed-form \
                  probability curves, and places sensors to maximize the probability of \
                  catching every unexpected arrival."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// TOML run configuration (required by every subcommand).
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Random seed; overrides `[run].seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output directory; overrides `[run].out`.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,

    /// Worker threads (default: available parallelism).
    #[arg(long, global = true, value_name = "N")]
    workers: Option<usize>,

    /// Force single-worker execution. Results are identical either way;
    /// this only trades speed for a quieter machine.
    #[arg(long, global = true)]
    deterministic: bool,
}

#[derive(Debug, Clone, Copy, Subcommand)]
enum Command {
    /// Fit the normal-activity posterior from ingested or synthetic history.
    Fit,
    /// Draw one labeled evaluation window from the configured truth.
    Synth,
    /// Classify one synthetic window with both probability curves.
    Classify,
    /// Measure both curves' errors against a Monte Carlo oracle.
    Gap,
    /// Greedily place sensors maximizing the void-probability objective.
    Place,
    /// Run the paired classification experiment over many windows.
    Evaluate,
    /// Run the end-to-end detection comparison over many replications.
    Pipeline,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Fit => "fit",
            Command::Synth => "synth",
            Command::Classify => "classify",
            Command::Gap => "gap",
            Command::Place => "place",
            Command::Evaluate => "evaluate",
            Command::Pipeline => "pipeline",
        }
    }
}

/// Exit status contract: configuration problems are distinguishable from
/// bad data and from numerical failures without parsing stderr.
fn exit_code(error: &Error) -> u8 {
    match error {
        Error::InvalidArgument(_) => 2,
        Error::Format(_) | Error::Io(_) | Error::OutOfDomain { .. } | Error::UndefinedRate(_) => 3,
        Error::Numerical(_) => 4,
    }
}

fn run(cli: &Cli) -> Result<()> {
    let config_path = cli.config.as_deref().ok_or_else(|| {
        Error::InvalidArgument("--config <FILE> is required; see --help".to_string())
    })?;
    let config_bytes = std::fs::read(config_path).map_err(|e| {
        Error::InvalidArgument(format!("cannot read config {}: {e}", config_path.display()))
    })?;
    let config_sha256 = outputs::sha256_hex(&config_bytes);
    let config = RunConfig::load(config_path)?;

    let seed = cli.seed.unwrap_or(config.run.seed);
    let out_dir = cli.out.clone().unwrap_or_else(|| config.run.out.clone());
    let workers = if cli.deterministic {
        1
    } else {
        cli.workers.unwrap_or(0)
    };
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build_global()
        .map_err(|e| Error::InvalidArgument(format!("cannot configure {workers} workers: {e}")))?;

    let mut session = OutputSession::create(&out_dir)?;
    let outcome = match cli.command {
        Command::Fit => commands::fit(&config, seed, &mut session),
        Command::Synth => commands::synth(&config, seed, &mut session),
        Command::Classify => commands::classify_cmd(&config, seed, &mut session),
        Command::Gap => commands::gap(&config, seed, &mut session),
        Command::Place => commands::place(&config, seed, &mut session),
        Command::Evaluate => commands::evaluate(&config, seed, &mut session),
        Command::Pipeline => commands::pipeline(&config, seed, &mut session),
    };
    match outcome {
        Ok(()) => {
            let files = session.finish(cli.command.name(), seed, &config_sha256)?;
            for name in files {
                println!("wrote {}", out_dir.join(name).display());
            }
            Ok(())
        }
        Err(e) => {
            session.discard();
            Err(e)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
