use std::process::ExitCode;

use clap::Parser;

fn main() -> ExitCode {
    topictree_cli::run(topictree_cli::Cli::parse())
}
