//! `adfilter`: generate twin-experiment data, train auto-differentiable
//! filters, evaluate them and run the oracle, gradient and taper checks.

mod args;
mod commands;

use std::process::ExitCode;

use adfilter_core::Error;
use clap::Parser;

use args::{Cli, Command};

/// 0 success, 2 invalid input, 3 diverged run, 4 I/O; 1 for anything else.
fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Io(_) => 4,
        Error::DivergedRun(_) => 3,
        e if e.is_divergence() => 3,
        Error::Validation { .. }
        | Error::EmptyObservation { .. }
        | Error::DimTooSmall { .. }
        | Error::EnsembleTooSmall(_)
        | Error::StaticObservationRequired
        | Error::LinearOnly(_)
        | Error::UnknownParameter(_)
        | Error::Parse { .. }
        | Error::Json(_) => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Generate(a) => commands::generate(&a),
        Command::Train(a) => commands::train(&a),
        Command::Evaluate(a) => commands::evaluate(&a),
        Command::Oracle(a) => commands::oracle(&a),
        Command::Gradcheck(a) => commands::gradcheck(&a),
        Command::Tapergrid(a) => commands::tapergrid(&a),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
