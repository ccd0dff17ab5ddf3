use std::process::ExitCode;

use clap::Parser;

mod args;
mod commands;
mod config;
mod output;

use args::{Cli, Command};

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Cram(a) => commands::cmd_cram(a),
        Command::Split(a) => commands::cmd_split(a),
        Command::Simulate(a) => commands::cmd_simulate(a),
        Command::Diagnose(a) => commands::cmd_diagnose(a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!("cramkit: error: {failure}");
            ExitCode::FAILURE
        }
    }
}
