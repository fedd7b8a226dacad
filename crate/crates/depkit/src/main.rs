use std::process::ExitCode;

use clap::Parser;
use depkit::cli::{dispatch, Cli};

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(outcome) => {
            print!("{}", outcome.summary);
            println!("run directory: {}", outcome.run_dir.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("depkit {}: {e}", cli.command.verb());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
