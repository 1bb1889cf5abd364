use std::process::ExitCode;

use clap::Parser;

fn main() -> ExitCode {
    match odys::cli::run(odys::cli::Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
