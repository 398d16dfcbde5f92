//! `aeromine`: run design-mining experiments, host the measurement service,
//! compute brute-force references and work with journals.

mod commands;
mod error;
mod export;
mod summary;

use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use crate::error::CliError;

#[derive(Debug, Parser)]
#[command(name = "aeromine", version, about = "Surrogate-assisted design mining for turbine arrays")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the surrogate-assisted engine on a config file.
    Run(RunArgs),
    /// Run the same loop without surrogates, evaluating every offspring.
    Baseline(BaselineArgs),
    /// Serve every run in a data directory over HTTP.
    Serve(ServeArgs),
    /// Exhaustive grid search of the noise-free synthetic function.
    Bruteforce(BruteforceArgs),
    /// Flatten a journal into a CSV table.
    Export(ExportArgs),
    /// Compare two journals by oracle calls needed to reach a target.
    Compare(CompareArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum OracleArg {
    Synthetic,
    Manual,
}

#[derive(Debug, clap::Args)]
struct Overrides {
    /// TOML run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the config budget.
    #[arg(long)]
    budget: Option<u64>,
    /// Journal file to create. Defaults to `<data>/<run id>.jsonl`.
    #[arg(long)]
    journal: Option<PathBuf>,
    /// Data directory for journals.
    #[arg(long = "data", env = "AEROMINE_DATA_DIR", default_value = "aeromine-data")]
    data_dir: PathBuf,
}

#[derive(Debug, clap::Args)]
struct RunArgs {
    #[command(flatten)]
    common: Overrides,
    /// Overrides the config oracle.
    #[arg(long, value_enum)]
    oracle: Option<OracleArg>,
    /// Address the measurement service listens on for manual runs.
    #[arg(long, default_value = "127.0.0.1:8080")]
    bind: SocketAddr,
}

#[derive(Debug, clap::Args)]
struct BaselineArgs {
    #[command(flatten)]
    common: Overrides,
}

#[derive(Debug, clap::Args)]
struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1:8080")]
    bind: SocketAddr,
    #[arg(long = "data", env = "AEROMINE_DATA_DIR", default_value = "aeromine-data")]
    data_dir: PathBuf,
}

#[derive(Debug, clap::Args)]
struct BruteforceArgs {
    #[arg(long)]
    config: PathBuf,
    /// Grid points per continuous parameter and for the spacing.
    #[arg(long, default_value_t = 21, value_parser = clap::value_parser!(u32).range(1..))]
    resolution: u32,
    /// Refuse grids with more points than this.
    #[arg(long, default_value_t = aeromine_core::oracle::DEFAULT_GRID_CAP)]
    cap: u64,
}

#[derive(Debug, clap::Args)]
struct ExportArgs {
    #[arg(long)]
    journal: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, clap::Args)]
struct CompareArgs {
    #[arg(long)]
    a: PathBuf,
    #[arg(long)]
    b: PathBuf,
    /// Fitness both runs are measured against. Defaults to 95% of the lower
    /// of the two best fitnesses.
    #[arg(long, allow_negative_numbers = true)]
    target: Option<f64>,
    /// Check that the journals are identical once timestamps are removed.
    #[arg(long)]
    canonical: bool,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    let result = match cli.command {
        Command::Run(a) => commands::run(a),
        Command::Baseline(a) => commands::baseline(a),
        Command::Serve(a) => commands::serve(a),
        Command::Bruteforce(a) => commands::bruteforce(a),
        Command::Export(a) => commands::export(a),
        Command::Compare(a) => commands::compare(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_json_line());
            ExitCode::from(e.exit_code())
        }
    }
}

impl From<OracleArg> for aeromine_core::OracleKind {
    fn from(o: OracleArg) -> Self {
        match o {
            OracleArg::Synthetic => Self::Synthetic,
            OracleArg::Manual => Self::Manual,
        }
    }
}

pub(crate) type Result<T> = std::result::Result<T, CliError>;
