use std::process::ExitCode;

use bsbl_cli::{run, Cli};
use clap::Parser;

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("bsbl: {err}");
            ExitCode::from(err.code)
        }
    }
}
