//! `minidiff` command-line entry point.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage or consistency error.

mod cli;
mod config_file;
mod sample;
mod train;

use std::process::ExitCode;

use clap::Parser;

use cli::{Cli, Command};

/// A failure classified by exit code.
#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Runtime(String),
}

impl From<minidiff::Error> for Failure {
    fn from(e: minidiff::Error) -> Self {
        use minidiff::Error::*;
        match e {
            InvalidArgument(_) | InvalidSchedule(_) | ScheduleMismatch { .. } | Conditioning(_) => {
                Failure::Usage(e.to_string())
            }
            _ => Failure::Runtime(e.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

/// Prints `key = value` lines under a heading.
pub fn print_config(title: &str, pairs: &[(String, String)]) {
    println!("{title}:");
    let width = pairs.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
    for (k, v) in pairs {
        println!("  {k:<width$} = {v}");
    }
}

fn main() -> ExitCode {
    let args = match config_file::expand_args(std::env::args_os().collect()) {
        Ok(args) => args,
        Err(msg) => {
            eprintln!("error: {msg}");
            return ExitCode::from(2);
        }
    };
    let cli = Cli::parse_from(args);
    let result = match cli.command {
        Command::Train(args) => train::run(args),
        Command::Sample(args) => sample::run(args),
        Command::Schedule(args) => cli::schedule(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            eprintln!("run with --help for usage");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}
