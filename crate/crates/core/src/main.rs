use std::io::Write;
use std::process::ExitCode;

use clap::Parser;
use ctrf::cli::{run, Cli};

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    match run(cli, &mut out) {
        Ok(()) => {
            let _ = out.flush();
            ExitCode::SUCCESS
        }
        Err(e) => {
            let _ = out.flush();
            let message = e.to_string().replace('\n', " ");
            eprintln!("error: kind={} message={}", e.kind(), message);
            ExitCode::FAILURE
        }
    }
}
