use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use riccati_cli::commands::{self, Overrides};
use riccati_cli::{load_config, CliError};
use riccati_core::validate::ValidationOptions;
use riccati_core::Strategy;

#[derive(Parser)]
#[command(
    name = "riccati",
    version,
    about = "Max-plus fundamental solution semigroup for Riccati equations"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum StrategyArg {
    Linear,
    Doubling,
}

#[derive(Args, Default)]
struct GridArgs {
    /// Time step, overriding grid.delta.
    #[arg(long)]
    delta: Option<f64>,
    /// Number of steps, overriding grid.K.
    #[arg(long)]
    steps: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Build the semigroup table and write it to a file.
    Build {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        grid: GridArgs,
        #[arg(long, value_enum)]
        strategy: Option<StrategyArg>,
    },
    /// Evaluate a DRE solution from a stored table.
    Solve {
        #[arg(long)]
        table: PathBuf,
        /// Initial condition name from --config, or an inline JSON matrix.
        #[arg(long)]
        p0: String,
        #[arg(long)]
        out: PathBuf,
        /// Configuration supplying named initial conditions.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Bisect the escape bracket with direct evaluations.
        #[arg(long)]
        refine_escape: bool,
    },
    /// Compare the max-plus, symplectic, and RK45 solutions on the grid.
    Compare {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        p0: String,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        grid: GridArgs,
    },
    /// Run the invariant suite on a configured or seeded random system.
    Validate {
        #[arg(long, required_unless_present = "random_seed")]
        config: Option<PathBuf>,
        #[arg(long, conflicts_with = "config")]
        random_seed: Option<u64>,
        /// State dimension of the random system.
        #[arg(long, default_value_t = 2, requires = "random_seed")]
        dim: usize,
        #[command(flatten)]
        grid: GridArgs,
    },
}

fn overrides(grid: &GridArgs, strategy: Option<StrategyArg>) -> Overrides {
    Overrides {
        delta: grid.delta,
        steps: grid.steps,
        strategy: strategy.map(|s| match s {
            StrategyArg::Linear => Strategy::Linear,
            StrategyArg::Doubling => Strategy::Doubling,
        }),
        refine_escape: false,
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let stdout = &mut std::io::stdout().lock();
    match cli.command {
        Command::Build {
            config,
            out,
            grid,
            strategy,
        } => {
            let mut cfg = load_config(&config)?;
            overrides(&grid, strategy).apply(&mut cfg)?;
            commands::build_to_file(&cfg, &out, stdout)
        }
        Command::Solve {
            table,
            p0,
            out,
            config,
            refine_escape,
        } => {
            let cfg = config.as_deref().map(load_config).transpose()?;
            let known = cfg
                .as_ref()
                .map(|c| c.initial_conditions.as_slice())
                .unwrap_or(&[]);
            let refine = refine_escape || cfg.as_ref().is_some_and(|c| c.refine_escape);
            commands::solve_to_file(&table, &p0, known, refine, &out, stdout)
        }
        Command::Compare {
            config,
            p0,
            out,
            grid,
        } => {
            let mut cfg = load_config(&config)?;
            overrides(&grid, None).apply(&mut cfg)?;
            commands::compare_to_file(&cfg, &p0, &out, stdout)
        }
        Command::Validate {
            config,
            random_seed,
            dim,
            grid,
        } => match (config, random_seed) {
            (Some(path), _) => {
                let mut cfg = load_config(&path)?;
                overrides(&grid, None).apply(&mut cfg)?;
                commands::validate(&cfg, stdout).map(drop)
            }
            (None, Some(seed)) => {
                let defaults = ValidationOptions::default();
                let opts = ValidationOptions {
                    delta: grid.delta.unwrap_or(defaults.delta),
                    steps: grid.steps.unwrap_or(defaults.steps),
                    ..defaults
                };
                commands::validate_random(seed, dim, &opts, stdout).map(drop)
            }
            (None, None) => unreachable!("clap requires --config or --random-seed"),
        },
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("RICCATI_LOG", "warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
