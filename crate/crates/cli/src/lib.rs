//! Command-line front end: dataset files, `simulate`, `infer` and
//! `benchmark`.

pub mod args;
pub mod commands;
pub mod error;
pub mod manifest;

pub use args::{Cli, Command};
pub use error::CliError;

/// Runs a parsed command line on the current rayon pool.
pub fn run(cli: &Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Simulate(a) => commands::simulate(a),
        Command::Infer(a) => commands::infer(a),
        Command::Benchmark(a) => commands::benchmark(a),
    }
}
