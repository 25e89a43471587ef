use std::process::ExitCode;

use clap::Parser;

fn main() -> ExitCode {
    let cli = cf_engine_cli::cli::Cli::parse();
    match cf_engine_cli::cli::run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
