use std::io;
use std::process::ExitCode;

use clap::Parser;
use nwidth::cli::{run, Cli};

fn main() -> ExitCode {
    let cli = Cli::parse();
    let mut stderr = io::stderr();
    match run(cli, &mut io::stdout().lock(), &mut stderr) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
