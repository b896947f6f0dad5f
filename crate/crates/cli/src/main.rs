mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "trackmpc", version, about = "Benchmark-tracking MPC backtester")]
struct Cli {
    /// Log progress to stderr.
    #[arg(short, long, global = true)]
    verbose: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the receding-horizon strategy over a price history.
    Backtest {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        prices: PathBuf,
        /// Output directory for the report and manifest.
        #[arg(long)]
        out: PathBuf,
        /// Overrides `seed` in the config.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Write a synthetic price history from the `[synthetic]` section.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        /// Price CSV to write.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Fit a VAR(2) to the last `window` returns of a price history.
    Calibrate {
        #[arg(long)]
        prices: PathBuf,
        #[arg(long, default_value_t = 200)]
        window: usize,
        /// Coefficient CSV to write.
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.verbose { "info" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    let result = match cli.command {
        Command::Backtest {
            config,
            prices,
            out,
            seed,
        } => commands::backtest(&config, &prices, &out, seed),
        Command::Simulate { config, out, seed } => commands::simulate(&config, &out, seed),
        Command::Calibrate {
            prices,
            window,
            out,
        } => commands::calibrate(&prices, window, &out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
