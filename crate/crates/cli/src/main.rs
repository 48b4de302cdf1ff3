use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};
use kpzlab::experiment::config::{ExperimentConfig, ExperimentKind};
use kpzlab::experiment::estimates::read_sweep;
use kpzlab::experiment::output::{write_fits, write_outputs};
use kpzlab::experiment::sweep::FitRow;
use kpzlab::experiment::{execution, run};
use kpzlab::stats::{fit_exponent, fit_exponent_weighted, CheckStatus, FitPoint};
use kpzlab::Error;

const OUTPUT_DIR_ENV: &str = "KPZLAB_OUTPUT_DIR";
const DEFAULT_OUTPUT_DIR: &str = "kpzlab-out";

#[derive(Parser)]
#[command(name = "kpzlab", about = "Exclusion-process and stochastic heat equation Monte Carlo laboratory")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct RunArgs {
    /// Experiment config (JSON).
    config: PathBuf,
    /// Worker threads; overrides the config.
    #[arg(long)]
    workers: Option<usize>,
    /// Master seed; overrides the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; overrides the config and $KPZLAB_OUTPUT_DIR.
    #[arg(long)]
    output_dir: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a config file.
    Run(RunArgs),
    /// Run the identity suite, whatever kind the config names.
    IdentitySuite(RunArgs),
    /// Log-log fit of one estimator from a sweep CSV.
    Fit {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        estimator: String,
        /// Weight points by their relative standard errors.
        #[arg(long)]
        weighted: bool,
    },
    /// Print the tool version.
    Version,
}

/// Exit status for each failure class.
fn exit_code(e: &Error) -> u8 {
    match e {
        Error::InvalidParameter(_) | Error::DensityNotHalf(_) | Error::Json(_) => 2,
        Error::BufferViolation(_) | Error::TooManyInvalid { .. } | Error::NotDecayed(_) => 3,
        Error::Io(_) => 4,
        _ => 1,
    }
}

fn load_config(args: &RunArgs, force_suite: bool) -> Result<ExperimentConfig, Error> {
    let text = std::fs::read_to_string(&args.config)?;
    let mut cfg: ExperimentConfig =
        serde_json::from_str(&text).map_err(|e| Error::InvalidParameter(format!("{}: {e}", args.config.display())))?;
    if force_suite {
        cfg.kind = ExperimentKind::IdentitySuite;
    }
    if args.workers.is_some() {
        cfg.workers = args.workers;
    }
    if let Some(seed) = args.seed {
        cfg.master_seed = seed;
    }
    if let Some(dir) = &args.output_dir {
        cfg.output_dir = Some(dir.clone());
    }
    cfg.validate()?;
    Ok(cfg)
}

fn output_dir(cfg: &ExperimentConfig) -> PathBuf {
    cfg.output_dir
        .clone()
        .or_else(|| std::env::var_os(OUTPUT_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUTPUT_DIR))
}

fn run_command(args: &RunArgs, force_suite: bool) -> Result<bool, Error> {
    let cfg = load_config(args, force_suite)?;
    let dir = output_dir(&cfg);
    let start = Instant::now();
    let out = run(&cfg)?;
    let workers = execution(cfg.workers).workers();
    let manifest = write_outputs(&dir, &cfg, &out, workers, start.elapsed().as_secs_f64())?;
    for r in out.checks.iter().filter(|r| r.status == CheckStatus::Fail) {
        println!(
            "FAIL {}: lhs={} rhs={} se={} z={}",
            r.check_name, r.lhs, r.rhs, r.combined_stderr, r.z_score
        );
    }
    println!(
        "{}: {} checks, {} failed, {} insufficient power; {} files in {} ({:.1} s)",
        cfg.kind.as_str(),
        out.checks.len(),
        out.count(CheckStatus::Fail),
        out.count(CheckStatus::InsufficientPower),
        manifest.outputs.len() + 1,
        dir.display(),
        manifest.wall_time_seconds
    );
    Ok(out.all_pass())
}

fn fit_command(input: &Path, estimator: &str, weighted: bool) -> Result<(), Error> {
    let rows = read_sweep(&std::fs::read_to_string(input)?)?;
    let points: Vec<FitPoint> = rows
        .iter()
        .filter(|r| r.estimator == estimator)
        .map(|r| FitPoint::new(r.t_macro, r.value, r.stderr))
        .collect();
    if points.is_empty() {
        return Err(Error::InvalidParameter(format!(
            "no rows for estimator '{estimator}' in {}",
            input.display()
        )));
    }
    let fit = if weighted {
        fit_exponent_weighted(&points)?
    } else {
        fit_exponent(&points)?
    };
    let row = FitRow {
        estimator: estimator.to_string(),
        fit,
    };
    write_fits(&[row], std::io::stdout().lock())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run(args) => run_command(args, false),
        Command::IdentitySuite(args) => run_command(args, true),
        Command::Fit {
            input,
            estimator,
            weighted,
        } => fit_command(input, estimator, *weighted).map(|_| true),
        Command::Version => {
            println!("kpzlab {}", env!("CARGO_PKG_VERSION"));
            Ok(true)
        }
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
