use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use givint_cli::commands::{self, OutputOptions};
use givint_cli::config::RunConfig;
use givint_cli::CliError;

const EXIT_CODES: &str = "Exit codes:
  0  success (low availability is a result, not an error)
  1  i/o or internal failure
  2  invalid configuration, scenario dump schema error, or compared runs cover different epochs
  3  state not observable
  4  continuity alert (outputs are still written)";

#[derive(Parser)]
#[command(name = "givint", version, about = "GNSS/IMU/vision integrity monitoring runs", after_help = EXIT_CODES)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a scenario from a run config and process it.
    #[command(after_help = EXIT_CODES)]
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Disable fault detection and exclusion.
        #[arg(long)]
        no_fde: bool,
        /// Scenario seed; first seed for --montecarlo.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Run N seeds in parallel, one subdirectory each.
        #[arg(long, value_name = "N")]
        montecarlo: Option<usize>,
        /// Write HPE vs. PEB plots per fault mode as SVG.
        #[arg(long)]
        plots: bool,
        /// Also write the generated scenario to this dump file.
        #[arg(long, value_name = "FILE")]
        dump: Option<PathBuf>,
    },
    /// Process a scenario dump.
    #[command(after_help = EXIT_CODES)]
    Replay {
        #[arg(long)]
        dump: PathBuf,
        /// Run config; its scenario section is ignored.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        no_fde: bool,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        plots: bool,
    },
    /// Per-epoch HPE and PEB differences of run B relative to run A.
    #[command(after_help = EXIT_CODES)]
    Compare {
        a: PathBuf,
        b: PathBuf,
        /// Directory for compare.csv and compare.txt.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn out_dir(flag: Option<PathBuf>, cfg: &RunConfig) -> PathBuf {
    flag.or_else(|| cfg.out.clone()).unwrap_or_else(|| PathBuf::from("out"))
}

fn execute(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Run { config, no_fde, seed, out, montecarlo, plots, dump } => {
            let mut cfg = RunConfig::load(&config)?;
            if no_fde {
                cfg.fde = false;
            }
            if seed.is_some() {
                cfg.seed = seed;
            }
            let out = out_dir(out, &cfg);
            match montecarlo {
                Some(n) => {
                    let opts = OutputOptions { plots, dump: None };
                    let text = commands::montecarlo(&cfg, n, &out, &opts)?;
                    print!("{text}");
                }
                None => {
                    let opts = OutputOptions { plots, dump };
                    commands::run(&cfg, &out, &opts)?;
                    println!("wrote {}", out.display());
                }
            }
        }
        Command::Replay { dump, config, no_fde, out, plots } => {
            let mut cfg = match config {
                Some(p) => RunConfig::load(&p)?,
                None => RunConfig::default(),
            };
            if no_fde {
                cfg.fde = false;
            }
            let out = out_dir(out, &cfg);
            commands::replay(&dump, &cfg, &out, &OutputOptions { plots, dump: None })?;
            println!("wrote {}", out.display());
        }
        Command::Compare { a, b, out } => {
            let c = commands::compare(&a, &b, out.as_deref())?;
            print!("{}", c.report);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("givint: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
