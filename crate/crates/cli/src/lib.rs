//! The `hotspot` command line: argument parsing, config files and the
//! subcommands that drive the pipeline.

pub mod args;
mod commands;
mod config;

use std::ffi::OsString;

use clap::Parser;
use hotspot_core::Exec;

use crate::args::{Cli, Command};

/// Exit code for invalid arguments, configuration or data.
pub const EXIT_USAGE: i32 = 1;
/// Exit code for unreadable or unwritable files.
pub const EXIT_IO: i32 = 2;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Io(String),
    #[error(transparent)]
    Core(#[from] hotspot_core::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Io(_) => EXIT_IO,
            CliError::Core(e) if e.is_io() => EXIT_IO,
            _ => EXIT_USAGE,
        }
    }
}

fn dispatch(cli: &Cli) -> Result<(), CliError> {
    let exec = if cli.sequential { Exec::Sequential } else { Exec::default() };
    match &cli.command {
        Command::Synth(a) => commands::synth(a),
        Command::Ingest(a) => commands::ingest(a),
        Command::Join(a) => commands::join(a, exec),
        Command::Grid(a) => commands::grid(a),
        Command::Train(a) => commands::train(a, exec),
        Command::Eval(a) => commands::evaluate(a, exec),
        Command::Pipeline(a) => commands::pipeline(a, exec),
        Command::Ablate(a) => commands::ablate(a, exec),
        Command::Sweep(a) => commands::sweep(a, exec),
        Command::Importance(a) => commands::importance(a),
        Command::Render(a) => commands::render(a),
    }
}

/// Runs one command and returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString>,
{
    let argv: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    let argv = match config::expand(argv) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e}");
            return e.exit_code();
        }
    };
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {} failed: {e}", cli.command.name());
            e.exit_code()
        }
    }
}
