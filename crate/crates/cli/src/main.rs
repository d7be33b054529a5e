//! `qrt`: run declarative sweep experiments or check their Fock-space
//! convergence. Exit codes: 0 success, 2 validation or runtime error,
//! 3 convergence failure.

mod config;
mod runner;
mod table;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::{ExperimentConfig, OutputFormat};

#[derive(Parser)]
#[command(name = "qrt", version, about = "Sequential-measurement statistics sweeps")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigSource {
    /// Path to a TOML experiment config.
    #[arg(long, conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Bundled preset name (fig1 through fig5).
    #[arg(long)]
    preset: Option<String>,
}

impl ConfigSource {
    fn load(&self) -> Result<ExperimentConfig, String> {
        let text = match (&self.config, &self.preset) {
            (Some(path), None) => std::fs::read_to_string(path)
                .map_err(|e| format!("cannot read {}: {e}", path.display()))?,
            (None, Some(name)) => config::preset(name)
                .ok_or_else(|| {
                    format!(
                        "unknown preset \"{name}\"; available: {}",
                        config::PRESET_NAMES.join(", ")
                    )
                })?
                .to_string(),
            _ => return Err("give exactly one of --config or --preset".into()),
        };
        ExperimentConfig::from_toml(&text)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment and write its result table.
    Run {
        #[command(flatten)]
        source: ConfigSource,
        /// Output path; overrides output.path from the config.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Output format; overrides output.format from the config.
        #[arg(long, value_parser = parse_format)]
        format: Option<OutputFormat>,
        /// Worker threads; overrides the QRT_WORKERS variable.
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Rerun designated probes at n_max + 2 and report the drift.
    Check {
        #[command(flatten)]
        source: ConfigSource,
    },
}

fn parse_format(s: &str) -> Result<OutputFormat, String> {
    match s {
        "csv" => Ok(OutputFormat::Csv),
        "json" => Ok(OutputFormat::Json),
        other => Err(format!("unknown format \"{other}\" (csv or json)")),
    }
}

fn configure_workers(flag: Option<usize>) -> Result<(), String> {
    let from_env = std::env::var("QRT_WORKERS")
        .ok()
        .map(|v| {
            v.parse::<usize>()
                .map_err(|_| format!("QRT_WORKERS must be a positive integer, got \"{v}\""))
        })
        .transpose()?;
    if let Some(n) = flag.or(from_env) {
        if n == 0 {
            return Err("worker count must be positive".into());
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| format!("worker pool: {e}"))?;
    }
    Ok(())
}

fn run_main() -> Result<ExitCode, String> {
    let cli = Cli::parse();
    match cli.command {
        Command::Run {
            source,
            out,
            format,
            workers,
        } => {
            configure_workers(workers)?;
            let config = source.load()?;
            let table = runner::run(&config)?;
            let format = format.unwrap_or(config.output.format);
            let path = out.unwrap_or_else(|| PathBuf::from(&config.output.path));
            let rendered = table.render(format)?;
            std::fs::write(&path, rendered)
                .map_err(|e| format!("cannot write {}: {e}", path.display()))?;
            eprintln!(
                "wrote {} rows to {} ({} clipped, {} excluded)",
                table.rows.len(),
                path.display(),
                table.metadata.diagnostics.clipped,
                table.metadata.diagnostics.conditioning_excluded
            );
            Ok(ExitCode::SUCCESS)
        }
        Command::Check { source } => {
            let config = source.load()?;
            let report = runner::check_convergence(&config)?;
            print!("{}", report.render());
            if report.passed() {
                Ok(ExitCode::SUCCESS)
            } else {
                Ok(ExitCode::from(3))
            }
        }
    }
}

fn main() -> ExitCode {
    match run_main() {
        Ok(code) => code,
        Err(message) => {
            eprintln!("error: {message}");
            ExitCode::from(2)
        }
    }
}
