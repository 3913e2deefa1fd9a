//! `ptl`: command-line driver for the curriculum engine.
//!
//! Exit status: 0 on success, 1 for usage errors, 2 for invalid data,
//! 3 when an external backend fails.

mod args;
mod commands;
mod config;
mod error;
mod lock;

use std::process::ExitCode;

use clap::Parser;

fn main() -> ExitCode {
    let cli = match args::Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(error::Exit::Usage as u8)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let level = if cli.verbose {
        log::LevelFilter::Info
    } else {
        log::LevelFilter::Warn
    };
    env_logger::Builder::new()
        .filter_level(level)
        .parse_env("PTL_LOG")
        .format_timestamp(None)
        .init();

    match commands::dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {:#}", e.error);
            ExitCode::from(e.exit as u8)
        }
    }
}
