//! `nbvqpco`: command-line driver for discretization, Carleman lifting, system
//! assembly, sigma decomposition, VQLS solves, inversion and bound reports.

mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use nbvqpco_core::Error;

#[derive(Debug, Parser)]
#[command(name = "nbvqpco", version, about = "Carleman + VQLS pipeline for PDE-constrained inverse problems")]
struct Cli {
    /// Seed for every random choice (VQLS initialization).
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Worker threads for grid and census points (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
pub struct SystemArgs {
    /// Flat key = value config file.
    pub config: PathBuf,
    /// Carleman truncation level (overrides `level` in the config).
    #[arg(long = "N", alias = "level")]
    pub level: Option<usize>,
    /// Euler scheme (overrides `scheme` in the config).
    #[arg(long, value_enum)]
    pub scheme: Option<SchemeArg>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum SchemeArg {
    Forward,
    Backward,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum InnerArg {
    Classical,
    Vqls,
    Both,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum CostArg {
    Local,
    Global,
    LocalUnnormalized,
    GlobalUnnormalized,
}

#[derive(Debug, Args)]
pub struct VqlsArgs {
    #[arg(long, default_value_t = 3)]
    pub layers: usize,
    #[arg(long, default_value_t = 200)]
    pub max_iter: usize,
    #[arg(long, default_value_t = 3)]
    pub restarts: usize,
    #[arg(long, default_value_t = 0.8)]
    pub step: f64,
    #[arg(long, value_enum, default_value = "local")]
    pub cost: CostArg,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write F1, F2 and u0 of the configured system.
    Discretize {
        config: PathBuf,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Write the truncated Carleman matrix and lifted initial state.
    Lift {
        #[command(flatten)]
        sys: SystemArgs,
    },
    /// Write the stacked Euler system.
    Assemble {
        #[command(flatten)]
        sys: SystemArgs,
        /// Keep the natural (unpadded) layout.
        #[arg(long)]
        no_pad: bool,
    },
    /// Sigma-basis decomposition of the parameter split of the stacked system.
    Decompose {
        #[command(flatten)]
        sys: SystemArgs,
    },
    /// Solve the stacked system classically, by VQLS, or both (reports E).
    Solve {
        #[command(flatten)]
        sys: SystemArgs,
        #[arg(long, value_enum, default_value = "classical")]
        inner: InnerArg,
        #[command(flatten)]
        vqls: VqlsArgs,
    },
    /// Grid search over the viscosity against synthetic probe measurements.
    Invert {
        #[command(flatten)]
        sys: SystemArgs,
        #[arg(long, value_enum, default_value = "classical")]
        inner: InnerArg,
        /// Grid as `lo:hi:step` (defaults to nu_min, nu_max, nu_step of the config).
        #[arg(long)]
        grid: Option<String>,
        #[command(flatten)]
        vqls: VqlsArgs,
    },
    /// Error and complexity bound report as JSON.
    Bounds {
        #[command(flatten)]
        sys: SystemArgs,
    },
    /// Sigma and Pauli term counts over a grid of problem sizes.
    LcuCensus {
        #[arg(long, value_delimiter = ',', default_value = "2,4")]
        nx_list: Vec<usize>,
        #[arg(long, value_delimiter = ',', default_value = "2,4,8")]
        nt_list: Vec<usize>,
        #[arg(long = "N-list", value_delimiter = ',', default_value = "1,2,3")]
        n_list: Vec<usize>,
        /// Largest matrix dimension for which Pauli terms are counted.
        #[arg(long, default_value_t = 256)]
        pauli_max_dim: usize,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
}

/// Failure classes mapped to exit codes.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Numeric(String),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::Config { .. } | Error::InvalidArgument(_) | Error::Io(_) | Error::NotPowerOfTwo { .. } => {
                CliError::Usage(e.to_string())
            }
            _ => CliError::Numeric(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Usage(e.to_string())
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(1);
        }
    };
    if let Some(jobs) = cli.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    let result = match &cli.command {
        Command::Discretize { config, out } => commands::discretize(config, out, cli.seed),
        Command::Lift { sys } => commands::lift(sys, cli.seed),
        Command::Assemble { sys, no_pad } => commands::assemble(sys, !no_pad, cli.seed),
        Command::Decompose { sys } => commands::decompose(sys, cli.seed),
        Command::Solve { sys, inner, vqls } => commands::solve(sys, *inner, vqls, cli.seed),
        Command::Invert { sys, inner, grid, vqls } => commands::invert(sys, *inner, grid.as_deref(), vqls, cli.seed),
        Command::Bounds { sys } => commands::bounds(sys, cli.seed),
        Command::LcuCensus {
            nx_list,
            nt_list,
            n_list,
            pauli_max_dim,
            out,
        } => commands::lcu_census(nx_list, nt_list, n_list, *pauli_max_dim, out, cli.seed),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(CliError::Numeric(m)) => {
            eprintln!("numeric failure: {m}");
            ExitCode::from(2)
        }
    }
}
