use std::process::ExitCode;

use clap::Parser;
use flyover_cli::{run, Cli};

fn main() -> ExitCode {
    // Usage errors exit with 2 from inside `parse`.
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
