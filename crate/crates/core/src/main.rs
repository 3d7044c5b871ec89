use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use pricegame::scenario::{self, exit, RunOptions};

#[derive(Debug, Parser)]
#[command(name = "pricegame", version, about = "Pricing game scenarios: solve, design, regulate, adapt prices")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Format {
    Csv,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run a scenario file, or every `*.json` scenario in a directory.
    Run {
        path: PathBuf,
        /// Output directory (overrides the `output` field).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Exit with code 3 when a certificate check fails.
        #[arg(long)]
        strict: bool,
        /// Overrides the scenario seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_enum, default_value = "csv")]
        format: Format,
    },
    /// Check a scenario file without running it.
    Validate { path: PathBuf },
    /// Run the bundled two-channel optical scenario.
    Reproduce {
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        strict: bool,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let code = match cli.command {
        Command::Run {
            path,
            out,
            strict,
            seed,
            format: Format::Csv,
        } => {
            let opts = RunOptions { strict, seed };
            if path.is_dir() {
                scenario::run_dir(&path, out.as_deref(), opts)
            } else {
                scenario::run_file(&path, out.as_deref(), opts)
            }
        }
        Command::Validate { path } => match std::fs::read_to_string(&path) {
            Ok(text) => {
                let diags = scenario::validate(&text);
                for d in &diags {
                    println!("{}:{d}", path.display());
                }
                if diags.is_empty() {
                    println!("{}: ok", path.display());
                    exit::OK
                } else {
                    exit::CONFIG
                }
            }
            Err(e) => {
                eprintln!("{}: {e}", path.display());
                exit::CONFIG
            }
        },
        Command::Reproduce { out, strict } => scenario::run_text(
            scenario::REFERENCE_SCENARIO,
            "reproduce",
            out.as_deref(),
            RunOptions { strict, seed: None },
        ),
    };
    ExitCode::from(code as u8)
}
