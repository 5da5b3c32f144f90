//! Command-line front end for the `bsbl` crate.
//!
//! Exit status: 0 on success, 2 for configuration or input errors, 3 for
//! numerical degeneracy, 4 when `solve --strict` stops without converging.

pub mod args;
mod commands;
pub mod io;

use std::fmt;

use bsbl::BsblError;

pub use args::{Cli, Command};
pub use commands::run;

pub const EXIT_INPUT: u8 = 2;
pub const EXIT_NUMERICAL: u8 = 3;
pub const EXIT_NOT_CONVERGED: u8 = 4;

#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    pub fn input(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_INPUT,
            message: message.into(),
        }
    }

    pub fn output(err: impl fmt::Display) -> Self {
        Self::input(format!("cannot write output: {err}"))
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}

impl From<BsblError> for CliError {
    fn from(err: BsblError) -> Self {
        let code = if err.is_numerical() {
            EXIT_NUMERICAL
        } else {
            EXIT_INPUT
        };
        Self {
            code,
            message: err.to_string(),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(err: std::io::Error) -> Self {
        Self::input(format!("I/O error: {err}"))
    }
}
