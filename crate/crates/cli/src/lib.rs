//! File formats, SVG export and the `wassreg` command-line driver.

pub mod commands;
pub mod config;
pub mod error;
pub mod io;
pub mod svg;

use std::ffi::OsString;

use clap::Parser;

use crate::commands::Cli;
use crate::error::{EXIT_OK, EXIT_USAGE};

/// Parses `args` and runs the command; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match commands::execute(cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
