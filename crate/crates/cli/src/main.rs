use std::process::ExitCode;

use clap::Parser;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let code = cascade_cli::run(cascade_cli::Cli::parse());
    ExitCode::from(code as u8)
}
