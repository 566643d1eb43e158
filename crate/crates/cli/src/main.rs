use std::process::ExitCode;

use clap::Parser;
use encsched_cli::{describe_error, run, Cli};

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(out) => {
            print!("{out}");
            ExitCode::SUCCESS
        }
        Err(err) => {
            eprintln!("error: {}", describe_error(&err));
            ExitCode::from(err.exit_code() as u8)
        }
    }
}
