use std::path::PathBuf;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};

use lagcast_cli::{commands, config, CliError, CliResult};

#[derive(Parser)]
#[command(
    name = "lagcast",
    version,
    about = "Climate-lagged dengue relative-risk forecasting"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit the configured methods on the train window and write fit
    /// artifacts plus in-sample fitted values.
    Fit {
        #[arg(long)]
        config: PathBuf,
    },
    /// Fit, forecast recursively and write prediction intervals.
    Forecast {
        #[arg(long)]
        config: PathBuf,
    },
    /// Score an existing forecast table against observed data.
    Evaluate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Generate a synthetic panel and write it as input CSVs with the
    /// generator's ground truth.
    Simulate {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Master RNG seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Number of cantons to generate.
        #[arg(long)]
        cantons: Option<usize>,
        /// Number of panel months to generate.
        #[arg(long)]
        months: Option<usize>,
        /// Output directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the whole pipeline and write every artifact to one
    /// directory.
    Report {
        #[arg(long)]
        config: PathBuf,
    },
}

fn main() {
    std::process::exit(run());
}

fn run() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return code;
        }
    };
    if let Err(e) = init_threads() {
        eprintln!("error: {e}");
        return e.exit_code();
    }
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

/// `LAGCAST_THREADS` caps worker threads; 0 or unset means automatic.
fn init_threads() -> CliResult<()> {
    let Ok(raw) = std::env::var("LAGCAST_THREADS") else {
        return Ok(());
    };
    let n: usize = raw.trim().parse().map_err(|_| {
        CliError::Constraint(format!(
            "LAGCAST_THREADS must be a thread count (0 = auto), got '{raw}'"
        ))
    })?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Constraint(format!("cannot size the thread pool: {e}")))
}

fn dispatch(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Fit { config } => commands::cmd_fit(&config::load_config(&config)?),
        Command::Forecast { config } => commands::cmd_forecast(&config::load_config(&config)?),
        Command::Evaluate { config } => commands::cmd_evaluate(&config::load_config(&config)?),
        Command::Report { config } => commands::cmd_report(&config::load_config(&config)?),
        Command::Simulate {
            config,
            seed,
            cantons,
            months,
            out,
        } => {
            let mut cfg = match config {
                Some(path) => config::load_config_lenient(&path)?,
                None => config::RunConfig::default(),
            };
            commands::apply_simulate_flags(&mut cfg, seed, cantons, months, out);
            commands::cmd_simulate(&cfg)
        }
    }
}
