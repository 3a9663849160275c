use std::process::ExitCode;

use clap::Parser;

fn main() -> ExitCode {
    match bcart_cli::run_cli(bcart_cli::Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            // one line, so callers can parse it
            let msg = format!("{e:#}").replace('\n', " ");
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
