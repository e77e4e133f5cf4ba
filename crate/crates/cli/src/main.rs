use std::process::ExitCode;

use aew_cli::{configure_threads, run, CliError};

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let result = configure_threads().and_then(|_| run(std::env::args_os()));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(e)) => {
            let code = e.exit_code();
            let _ = e.print();
            ExitCode::from(code as u8)
        }
        Err(e) => {
            eprintln!("aew: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
