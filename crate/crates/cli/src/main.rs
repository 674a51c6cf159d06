use std::process::ExitCode;

use clap::Parser;

fn main() -> ExitCode {
    let cli = moegeom_cli::Cli::parse();
    match moegeom_cli::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.code)
        }
    }
}
