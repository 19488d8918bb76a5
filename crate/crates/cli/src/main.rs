//! `swada`: subgroup and interaction meta-analysis from the command line.

mod analyze;
mod diagnose;
mod simulate;

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use swada_core::{Error, Model, Pooling, TauMethod};

#[derive(Parser)]
#[command(
    name = "swada",
    version,
    about = "Subgroup-specific and interaction meta-analysis"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Pool subgroup effects and the interaction from a study CSV.
    Analyze(analyze::Args),
    /// Run Monte Carlo scenarios and write coverage and width metrics.
    Simulate(simulate::Args),
    /// Quantify the mismatch between difference of averages and average difference.
    Diagnose(diagnose::Args),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ModelArg {
    Ce,
    Re,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum TauArg {
    Reml,
    Dl,
    Zero,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum OutputFormat {
    Json,
    Csv,
}

pub fn pooling(model: ModelArg, tau: TauArg) -> Pooling {
    let model = match model {
        ModelArg::Ce => Model::CommonEffect,
        ModelArg::Re => Model::RandomEffects,
    };
    let tau = match tau {
        TauArg::Reml => TauMethod::Reml,
        TauArg::Dl => TauMethod::DersimonianLaird,
        TauArg::Zero => TauMethod::FixedZero,
    };
    Pooling::new(model, tau)
}

/// Writes to `path`, or to standard output when absent.
pub fn emit(path: Option<&PathBuf>, text: &str) -> anyhow::Result<()> {
    match path {
        Some(p) => std::fs::write(p, text).map_err(|e| anyhow::anyhow!("{}: {e}", p.display())),
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(text.as_bytes())?;
            if !text.ends_with('\n') {
                out.write_all(b"\n")?;
            }
            Ok(())
        }
    }
}

/// Maps a failure to the documented exit status: 2 for bad input or
/// configuration, 3 for numerical non-convergence, 1 otherwise.
fn exit_status(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>() {
        Some(Error::NonConvergence(_) | Error::Singular(_)) => 3,
        Some(_) => 2,
        None => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Analyze(a) => analyze::run(a),
        Command::Simulate(a) => simulate::run(a),
        Command::Diagnose(a) => diagnose::run(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_status(&e))
        }
    }
}
