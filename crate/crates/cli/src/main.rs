use std::process::ExitCode;

use clap::Parser;
use gaussdrift_cli::{dispatch, Cli};

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            println!("error={}", e.category());
            ExitCode::FAILURE
        }
    }
}
