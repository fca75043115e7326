use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};
use cie_cli::experiment::{self, ExperimentConfig, STANDARD_CONFIG};
use cie_cli::report::ReportArgs;
use cie_cli::score::ScoreArgs;
use cie_cli::server::ServeArgs;

#[derive(Parser)]
#[command(name = "cie", version, about = "Find and audit the examples compression changes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Score a variant population against its baseline.
    Score(ScoreArgs),
    /// Accuracy, subgroup and over-index report for a score file.
    Report(ReportArgs),
    /// Run the desk experiment end to end.
    Experiment(ExperimentArgs),
    /// Serve an audit session over HTTP.
    Serve(ServeArgs),
}

#[derive(clap::Args)]
struct ExperimentArgs {
    /// Experiment config (TOML). Omit to run the standard desk config.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Print the standard config and exit.
    #[arg(long)]
    print_standard_config: bool,
    #[arg(long, required_unless_present = "print_standard_config")]
    out: Option<PathBuf>,
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Score(a) => cie_cli::score::run(&a).map(drop),
        Command::Report(a) => cie_cli::report::run(&a).map(drop),
        Command::Serve(a) => cie_cli::server::run(&a),
        Command::Experiment(a) => {
            if a.print_standard_config {
                print!("{STANDARD_CONFIG}");
                return Ok(());
            }
            let bytes = match &a.config {
                Some(p) => std::fs::read(p).with_context(|| format!("reading {}", p.display()))?,
                None => STANDARD_CONFIG.as_bytes().to_vec(),
            };
            let config = ExperimentConfig::from_toml_str(std::str::from_utf8(&bytes)?)
                .context("parsing experiment config")?;
            let out = a.out.expect("clap enforces --out");
            let result = experiment::run(&config, &bytes, &out)?;
            for v in &result.summary.variants {
                println!("{:<24} {:>6} modal CIEs", v.id, v.modal_cie_count);
            }
            println!("wrote {}", out.display());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
