use std::process::ExitCode;

use clap::Parser;
use fluidnet_cli::{run, Args};

fn init_threads() {
    let Ok(v) = std::env::var("FLUIDNET_THREADS") else {
        return;
    };
    match v.trim().parse::<usize>() {
        Ok(n) if n > 0 => {
            if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
                log::warn!("could not size the worker pool: {e}");
            }
            log::info!("workers: {n}");
        }
        _ => log::warn!("ignoring FLUIDNET_THREADS={v:?}, expected a positive integer"),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let args = Args::parse();
    init_threads();
    match run(&args) {
        Ok(outcome) => ExitCode::from(outcome.exit.code() as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
