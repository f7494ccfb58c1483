//! `converse-bench`: generate, validate, simulate and score converse-optimal
//! benchmark fixtures.
//!
//! Exit status: 0 on success, 1 when a check or an evaluation fails on its
//! own terms, 2 for usage, configuration and file errors.

mod args;
mod commands;

use std::process::ExitCode;

use clap::Parser;

use args::Cli;
use commands::CliError;

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError { code, error }) => {
            eprintln!("error: {error:#}");
            ExitCode::from(code)
        }
    }
}
