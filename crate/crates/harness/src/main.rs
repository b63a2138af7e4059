use clap::{Args, Parser, Subcommand};
use sgmcmc::Dataset;
use sgmcmc_harness::{
    run_experiment, write_csv, write_rows, ConfigError, ExperimentConfig, ExperimentKind,
    HarnessError,
};
use std::path::PathBuf;
use std::process::ExitCode;

/// Run SG-MCMC convergence experiments and write their results as CSV.
#[derive(Parser)]
#[command(name = "sgmcmc", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset x_i ~ N(mu, sigma^2).
    GenerateData {
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long, default_value_t = 1000)]
        n: usize,
        #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
        mu: f64,
        #[arg(long, default_value_t = 1.0)]
        sigma: f64,
        /// Dataset file; printed to stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Stationary bias against fixed step size.
    StationaryOrder(RunArgs),
    /// Bias/MSE against chain length with fixed or decreasing steps.
    RateSweep(RunArgs),
    /// Bias/MSE against chain length for several step-size decay rates.
    AlphaSweep(RunArgs),
    /// Prefactor (and friction) selection from short pilot runs.
    GridSearch(RunArgs),
    /// One-step weak error against a substepped reference.
    WeakOrder(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Result CSV; overrides the config's `output`, stdout when neither is set.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Base seed for per-run seeds.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    runs: Option<usize>,
    #[arg(long)]
    threads: Option<usize>,
}

fn accepts(command: &Command, kind: ExperimentKind) -> bool {
    matches!(
        (command, kind),
        (Command::StationaryOrder(_), ExperimentKind::StationaryOrder)
            | (Command::RateSweep(_), ExperimentKind::RateSweepFixed)
            | (Command::RateSweep(_), ExperimentKind::RateSweepDecreasing)
            | (Command::AlphaSweep(_), ExperimentKind::AlphaSweep)
            | (Command::GridSearch(_), ExperimentKind::GridSearch)
            | (Command::WeakOrder(_), ExperimentKind::WeakOrder)
    )
}

fn run(cli: Cli) -> Result<(), HarnessError> {
    let args = match &cli.command {
        Command::GenerateData { seed, n, mu, sigma, out } => {
            if *n == 0 || sigma.is_nan() || *sigma <= 0.0 {
                return Err(ConfigError("need n >= 1 and sigma > 0".into()).into());
            }
            let data = Dataset::generate(*seed, *n, *mu, *sigma);
            match out {
                Some(path) => data
                    .write(path)
                    .map_err(|e| ConfigError(format!("{}: {e}", path.display())))?,
                None => print!("{}", data.to_text()),
            }
            return Ok(());
        }
        Command::StationaryOrder(a)
        | Command::RateSweep(a)
        | Command::AlphaSweep(a)
        | Command::GridSearch(a)
        | Command::WeakOrder(a) => a,
    };

    let mut config = ExperimentConfig::load(&args.config)?;
    if !accepts(&cli.command, config.experiment) {
        return Err(ConfigError(format!(
            "config describes a `{}` experiment",
            config.experiment.name()
        ))
        .into());
    }
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(runs) = args.runs {
        config.runs = runs;
    }
    if args.threads == Some(0) {
        return Err(ConfigError("--threads must be >= 1".into()).into());
    }
    config.check()?;

    let output = run_experiment(&config, args.threads)?;
    match args.out.as_ref().or(config.output.as_ref()) {
        Some(path) => {
            write_csv(&output.rows, path)?;
            print!("{}", output.summary());
        }
        None => {
            write_rows(&output.rows, std::io::stdout().lock())?;
            eprint!("{}", output.summary());
        }
    }
    if output.all_diverged() {
        return Err(HarnessError::AllDiverged(format!(
            "all {} grid points diverged",
            output.rows.len()
        )));
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
