//! `kernelforge run|verify|oracle <config.json>`
//!
//! Exit codes: 0 success, 2 configuration error, 3 decay-gate failure,
//! 4 numerical failure. Errors are reported as JSON on stderr.

mod config;
mod tasks;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use kernelforge::Error;
use serde_json::json;

use config::{Overrides, RunConfig};
use tasks::Mode;

#[derive(Debug, Parser)]
#[command(name = "kernelforge", version, about = "Transfer-tensor propagation and spectra from JSON configs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the configured task and write all artifacts.
    Run(Invocation),
    /// Sample and evaluate the decay gate without extending.
    Verify(Invocation),
    /// Compare correlated and product-state evolution on a small explicit bath.
    Oracle(Invocation),
}

#[derive(Debug, clap::Args)]
struct Invocation {
    config: PathBuf,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Core(Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Core(e)
    }
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Core(e) => match e {
                Error::DecayGate { .. } => 3,
                Error::Instability { .. }
                | Error::StationaryNotReached { .. }
                | Error::Quadrature { .. }
                | Error::FitTolerance { .. }
                | Error::RankDeficient { .. }
                | Error::Linalg(_) => 4,
                _ => 2,
            },
        }
    }

    fn to_json(&self) -> serde_json::Value {
        let (kind, message) = match self {
            CliError::Config(m) => ("config", m.clone()),
            CliError::Core(e) => (
                match e {
                    Error::DecayGate { .. } => "decay_gate",
                    Error::Instability { .. } => "instability",
                    Error::StationaryNotReached { .. } => "stationary_not_reached",
                    Error::Quadrature { .. } | Error::FitTolerance { .. } => "bath_expansion",
                    Error::RankDeficient { .. } | Error::Linalg(_) => "linear_algebra",
                    Error::Io(_) => "io",
                    _ => "invalid_input",
                },
                e.to_string(),
            ),
        };
        let mut body = json!({ "code": self.code(), "kind": kind, "message": message });
        if let CliError::Core(Error::DecayGate { which, ratio, threshold }) = self {
            body["which"] = json!(which.to_string());
            body["ratio"] = json!(ratio);
            body["threshold"] = json!(threshold);
        }
        json!({ "error": body })
    }
}

fn write_outputs(cfg: &RunConfig, files: &[(&'static str, Vec<u8>)]) -> Result<(), CliError> {
    for (name, bytes) in files {
        let path = cfg.output_dir.join(name);
        std::fs::write(&path, bytes).map_err(|e| CliError::Config(format!("cannot write {}: {e}", path.display())))?;
    }
    Ok(())
}

fn execute(cli: &Cli) -> Result<(), CliError> {
    let (inv, mode) = match &cli.command {
        Command::Run(i) => (i, Mode::Run),
        Command::Verify(i) => (i, Mode::Verify),
        Command::Oracle(i) => (i, Mode::Oracle),
    };
    let cfg = RunConfig::load(&inv.config, &inv.overrides)?;
    let mut out = tasks::execute(&cfg, mode)?;
    write_outputs(&cfg, &out.files)?;
    match out.gate_failure.take() {
        Some(e) if mode == Mode::Verify => Err(e.into()),
        _ => Ok(()),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    kernelforge::heom::init_threads();
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::from(e.code())
        }
    }
}
