use std::process::ExitCode;

use clap::Parser;

use isoharness::cli::{run, Cli};
use isoharness::signals::prepare_for_faults;

fn main() -> ExitCode {
    prepare_for_faults();
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code.clamp(0, 255) as u8),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
