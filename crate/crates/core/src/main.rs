use std::io::Write;
use std::process::ExitCode;

use clap::Parser;
use cusp::cli::{exit_code, run, threads_from_env, Cli};
use cusp::exec::set_worker_count;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = threads_from_env().and_then(|threads| {
        if let Some(n) = threads {
            set_worker_count(n);
        }
        run(cli)
    });
    match result {
        Ok(msg) => {
            let _ = writeln!(std::io::stdout(), "{msg}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
