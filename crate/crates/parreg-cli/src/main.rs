use std::panic::{self, AssertUnwindSafe};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;
mod config;

/// Partial-regularity analysis for sampled incompressible flows.
#[derive(Parser)]
#[command(name = "parreg", version)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct RunArgs {
    /// JSON run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Output directory, created if missing.
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Cmd {
    /// Manufacture an analytic velocity/pressure history and store it.
    Generate(RunArgs),
    /// Integrate the viscous equations and store the trajectory.
    Solve(RunArgs),
    /// Evaluate the scaled cylinder functionals for a batch of queries.
    Functionals(RunArgs),
    /// Run the iterated regularity certificate at one event.
    Certify(RunArgs),
    /// Classify events by the pointwise smallness criteria.
    Scan(RunArgs),
    /// Cover a point set with parabolic boxes and related checks.
    Cover(RunArgs),
    /// Fit the parabolic box-counting dimension of a point set.
    Dimension(RunArgs),
    /// Probe the scale-transfer inequalities and exponent identities.
    VerifyLemmas(RunArgs),
}

impl Cmd {
    fn split(&self) -> (&'static str, &RunArgs) {
        match self {
            Cmd::Generate(a) => ("generate", a),
            Cmd::Solve(a) => ("solve", a),
            Cmd::Functionals(a) => ("functionals", a),
            Cmd::Certify(a) => ("certify", a),
            Cmd::Scan(a) => ("scan", a),
            Cmd::Cover(a) => ("cover", a),
            Cmd::Dimension(a) => ("dimension", a),
            Cmd::VerifyLemmas(a) => ("verify-lemmas", a),
        }
    }
}

/// One structured line on stderr per failure, so scripts can branch on the
/// code without parsing prose.
fn emit_error(code: &str, message: &str) {
    eprintln!("{}", serde_json::json!({ "error": { "code": code, "message": message } }));
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return ExitCode::SUCCESS;
            }
            emit_error("usage", &e.to_string());
            return ExitCode::from(1);
        }
    };
    let (name, args) = cli.cmd.split();
    match panic::catch_unwind(AssertUnwindSafe(|| commands::run(name, &args.config, &args.out))) {
        Ok(Ok(())) => ExitCode::SUCCESS,
        Ok(Err(e)) => {
            emit_error(e.code(), &e.to_string());
            ExitCode::from(e.exit_code() as u8)
        }
        Err(payload) => {
            let message = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            emit_error("internal", &message);
            ExitCode::from(2)
        }
    }
}
