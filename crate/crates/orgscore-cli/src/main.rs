//! `orgscore` — command-line entry point wiring the library modules into
//! reproducible pipelines. Every run that produces files also writes a
//! manifest sufficient to reproduce it.
//!
//! Exit codes: 0 success, 1 usage error, 2 data/processing error.

mod args;
mod commands;
mod error;
mod manifest;
mod settings;

use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::Parser;

fn main() -> ExitCode {
    let cli = match args::Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // --help / --version are ordinary output, not failures. Real
            // usage errors (unknown flag, missing value) print to standard
            // error and exit 1.
            let code = match e.kind() {
                ErrorKind::DisplayHelp
                | ErrorKind::DisplayVersion
                | ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand => 0u8,
                _ => 1u8,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
