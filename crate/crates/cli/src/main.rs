use std::process::ExitCode;

use clap::Parser;
use effdim_cli::{configure_threads, emit, run, Args};

fn main() -> ExitCode {
    let args = Args::parse();
    let result = configure_threads().and_then(|()| run(&args)).and_then(|out| emit(&args, &out));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("effdim: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
