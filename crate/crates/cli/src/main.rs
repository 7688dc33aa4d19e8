mod args;
mod commands;
mod io;

use std::process::ExitCode;

use cdml_core::Error;
use clap::Parser;

use args::{Cli, Command};

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::TrainAbort { .. } => 1,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth(a) => commands::synth(&a),
        Command::Prepare(a) => commands::prepare(&a),
        Command::Train(a) => commands::train(&a),
        Command::Grid(a) => commands::grid(&a),
        Command::Eval(a) => commands::eval(&a),
        Command::Embed(a) => commands::embed(&a),
        Command::Stream(a) => commands::stream(&a),
        Command::Score(a) => commands::score(&a),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
