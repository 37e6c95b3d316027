use std::process::ExitCode;

use clap::Parser;

fn main() -> ExitCode {
    let cli = oacnn::cli::Cli::parse();
    match oacnn::cli::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
