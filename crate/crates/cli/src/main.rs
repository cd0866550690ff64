use std::process::ExitCode;

use clap::Parser;
use latreg_cli::{CliError, Cli};

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            // help and version
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            eprintln!("{}", CliError::usage(e.to_string().trim_end().to_owned()).to_json());
            return ExitCode::from(2);
        }
    };
    match latreg_cli::run(cli) {
        Ok(ctx) => {
            println!("artifacts in {}", ctx.out().display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::FAILURE
        }
    }
}
